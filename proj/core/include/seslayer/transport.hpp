#pragma once

// Stream and datagram channel abstractions. Every blocking call takes a
// Deadline. The same interfaces are implemented over POSIX sockets (live mode)
// and over the deterministic simulator, so protocol code is shared by both.

#include <compare>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "seslayer/bytes.hpp"
#include "seslayer/clock.hpp"
#include "seslayer/errstack.hpp"
#include "seslayer/ledger.hpp"
#include "seslayer/random.hpp"

namespace seslayer {

struct Address {
  std::string host;
  std::uint16_t port = 0;

  std::string to_string() const;
  // "host:port"; throws Error(kConfigError) on malformed input.
  static Address parse(std::string_view text);

  friend auto operator<=>(const Address&, const Address&) = default;
};

// Failure of a transport operation. `transferred` is the number of bytes moved
// before the failure.
class TransportError : public Error {
 public:
  TransportError(std::int64_t code, std::string message, std::size_t transferred = 0);
  std::size_t transferred() const { return transferred_; }

 private:
  std::size_t transferred_;
};

[[noreturn]] void throw_timeout(std::string_view what, std::size_t transferred);
[[noreturn]] void throw_refused(const Address& peer);
[[noreturn]] void throw_closed(std::string_view what, std::size_t transferred);

class StreamChannel {
 public:
  virtual ~StreamChannel() = default;

  // Writes all of `data` as one message. Throws TransportError.
  virtual void write(ByteView data, Deadline deadline) = 0;
  // Fills `out` completely. Throws TransportError on timeout or peer close.
  virtual void read_exact(std::span<std::uint8_t> out, Deadline deadline) = 0;
  virtual void close() = 0;

  virtual Address local_address() const = 0;
  virtual Address peer_address() const = 0;

  Bytes read_n(std::size_t n, Deadline deadline) {
    Bytes b(n);
    read_exact(b, deadline);
    return b;
  }
};

class Listener {
 public:
  virtual ~Listener() = default;
  // Returns nullptr when the deadline passes without a connection.
  virtual std::unique_ptr<StreamChannel> accept(Deadline deadline) = 0;
  virtual Address address() const = 0;
  virtual void close() = 0;
};

struct Datagram {
  Address from;
  Bytes data;
};

class DatagramSocket {
 public:
  virtual ~DatagramSocket() = default;
  virtual void send_to(const Address& to, ByteView data) = 0;
  // nullopt when the deadline passes with nothing received.
  virtual std::optional<Datagram> receive(Deadline deadline) = 0;
  virtual Address local_address() const = 0;
  virtual void close() = 0;
};

// Factory for channels plus the execution environment around them: clock,
// randomness, task spawning and the traffic ledger.
class Network {
 public:
  virtual ~Network() = default;

  virtual const Clock& clock() const = 0;
  virtual RandomSource& random() = 0;
  virtual RoundTripLedger& ledger() = 0;

  // Throws TransportError: code 111 when nothing listens at `to`, 110 on
  // deadline expiry.
  virtual std::unique_ptr<StreamChannel> connect(const Address& to, Deadline deadline) = 0;
  virtual std::unique_ptr<Listener> listen(const Address& at) = 0;
  virtual std::unique_ptr<DatagramSocket> bind_datagram(const Address& at) = 0;

  // Runs `fn` concurrently as node `node`.
  virtual void spawn(std::string node, std::function<void()> fn) = 0;
  virtual void sleep_for(Micros d) = 0;
  // Simulated CPU work; live mode treats it as a sleep.
  virtual void consume_cpu(Micros d) { sleep_for(d); }
  // True once the environment asks long-running loops to wind down.
  virtual bool stopping() const { return false; }
};

}  // namespace seslayer
