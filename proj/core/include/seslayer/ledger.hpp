#pragma once

// Exact per-node, per-operation traffic accounting. Channels record every
// message they write and every round trip a reader waits on; protocol code
// labels the enclosing operation with an OpScope.

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "seslayer/clock.hpp"

namespace seslayer {

struct LedgerCounters {
  std::uint64_t messages_sent = 0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t round_trips = 0;
  std::uint64_t authentications = 0;
  std::uint64_t establishes_served = 0;
  Micros wall_time{0};

  LedgerCounters& operator+=(const LedgerCounters& o);
  friend bool operator==(const LedgerCounters&, const LedgerCounters&) = default;
};

// Node name and operation label of the calling thread. Simulated tasks and live
// connection threads each carry their own.
namespace context {
const std::string& node();
void set_node(std::string node);
const std::string& op();
void push_op(std::string op);
void pop_op();
}  // namespace context

inline constexpr std::string_view kUnscopedOp = "other";

class RoundTripLedger {
 public:
  void record_message(std::string_view node, std::string_view op, std::size_t bytes);
  void record_round_trip(std::string_view node, std::string_view op);
  // One completed authentication by `node` with `peer`.
  void record_authentication(std::string_view node, std::string_view peer, std::string_view op);
  void record_establish_served(std::string_view node);
  void add_wall_time(std::string_view node, std::string_view op, Micros t);

  LedgerCounters get(std::string_view node, std::string_view op) const;
  LedgerCounters node_total(std::string_view node) const;
  LedgerCounters op_total(std::string_view op) const;
  LedgerCounters total() const;
  std::uint64_t authentications_between(std::string_view node, std::string_view peer) const;
  // Sum over all peers whose name starts with `peer_prefix`.
  std::uint64_t authentications_with_prefix(std::string_view node,
                                            std::string_view peer_prefix) const;

  std::vector<std::string> nodes() const;
  void reset();

 private:
  using Key = std::pair<std::string, std::string>;
  LedgerCounters& slot(std::string_view node, std::string_view op);

  mutable std::mutex mu_;
  std::map<Key, LedgerCounters> counters_;
  std::map<Key, std::uint64_t> auth_pairs_;
};

// Labels the calling thread's operation for the ledger and accumulates its
// wall time on `clock` when it ends. Scopes nest; the innermost label wins.
class OpScope {
 public:
  OpScope(RoundTripLedger& ledger, const Clock& clock, std::string op);
  ~OpScope();
  OpScope(const OpScope&) = delete;
  OpScope& operator=(const OpScope&) = delete;

  Micros elapsed() const;

 private:
  RoundTripLedger& ledger_;
  const Clock& clock_;
  std::string op_;
  Micros start_;
};

}  // namespace seslayer
