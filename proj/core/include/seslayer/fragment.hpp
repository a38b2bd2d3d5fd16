#pragma once

// User-space datagram fragmentation, reassembly and paced sending. Lets a
// single logical datagram exceed the 64 KB kernel UDP limit.
//
// Fragment wire layout (big-endian):
//   u64 datagram_id | u16 index | u16 total | u16 payload_len | payload

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "seslayer/bytes.hpp"
#include "seslayer/clock.hpp"
#include "seslayer/transport.hpp"

namespace seslayer {

struct FragmentHeader {
  std::uint64_t datagram_id = 0;
  std::uint16_t index = 0;
  std::uint16_t total = 1;
  std::uint16_t payload_len = 0;

  static constexpr std::size_t kSize = 14;

  // index < total and total >= 1.
  bool valid() const { return total >= 1 && index < total; }
  friend bool operator==(const FragmentHeader&, const FragmentHeader&) = default;
};

struct Fragment {
  FragmentHeader header;
  Bytes payload;
};

struct PacingPolicy {
  std::size_t max_fragment_payload = 60000;
  Micros inter_fragment_delay{0};

  static constexpr std::size_t kMaxFragmentPayload = 65000;
  // Throws std::invalid_argument unless 0 < max_fragment_payload <= 65000.
  void validate() const;
};

Bytes encode_fragment(const Fragment& f);
// Throws Error(kProtocolError) on a short buffer, inconsistent length or an
// invalid header.
Fragment decode_fragment(ByteView datagram);

// Splits `payload` into ceil(len / max_fragment_payload) fragments. Throws
// Error(kOversize) when more than 65535 fragments would be needed and
// std::invalid_argument for an empty payload.
std::vector<Fragment> fragment(ByteView payload, const PacingPolicy& policy,
                               std::uint64_t datagram_id);

// Writes fragments in index order, sleeping inter_fragment_delay between
// consecutive sends. A send failure is rethrown with a socket-layer frame on
// top.
void send_paced(const std::vector<Fragment>& fragments, const PacingPolicy& policy,
                DatagramSocket& socket, const Address& to, Network& net);

// Monotonic per-sender ids, seeded once at construction.
class DatagramIdGenerator {
 public:
  explicit DatagramIdGenerator(std::uint64_t seed) : next_(seed) {}
  std::uint64_t next() { return next_++; }

 private:
  std::uint64_t next_;
};

// Collects fragments keyed by (sender, datagram_id). Not internally locked;
// callers serialize access.
class ReassemblyBuffer {
 public:
  static constexpr Micros kDefaultEviction = std::chrono::seconds(30);

  explicit ReassemblyBuffer(Micros eviction_deadline = kDefaultEviction)
      : eviction_(eviction_deadline) {}

  // Returns the payload exactly once, when the last missing fragment arrives.
  // Duplicates are ignored, also after completion. A fragment whose `total`
  // disagrees with earlier ones evicts the entry and throws
  // Error(kProtocolError). Entries older than the eviction deadline are
  // dropped silently.
  std::optional<Bytes> reassemble(const std::string& sender, const FragmentHeader& header,
                                  ByteView payload, Micros now);

  void evict_expired(Micros now);
  std::size_t live_entries() const { return partial_.size(); }
  std::uint64_t evicted_count() const { return evicted_; }

 private:
  struct Key {
    std::string sender;
    std::uint64_t id;
    friend auto operator<=>(const Key&, const Key&) = default;
  };
  struct Partial {
    std::uint16_t total = 0;
    std::map<std::uint16_t, Bytes> pieces;
    Micros expires{0};
  };

  Micros eviction_;
  std::map<Key, Partial> partial_;
  std::map<Key, Micros> completed_;
  std::uint64_t evicted_ = 0;
};

}  // namespace seslayer
