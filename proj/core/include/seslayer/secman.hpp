#pragma once

// Per-daemon security manager: runs establish on both ends, resumes cached
// sessions optimistically, answers unknown sessions with INVALIDATE, and
// carries secure datagrams. The same code runs over live sockets and over the
// simulator.
//
// Establish exchange (all messages kind ESTABLISH, plain frames):
//   C->S hello       offer, claim, daemon address, X25519 share, command level
//   S->C negotiated  method, suite, mode, X25519 share
//   method exchange  round_trips exchanges; the server's last message carries
//                    the grant: the session record encrypted and MAC'd under
//                    keys derived from the DH secret, the method key, both
//                    nonces and the transcript hash
//   C->S final       client proof and key confirmation (one way)
// The server caches the session only after the key confirmation verifies, and
// the client only after sending it.

#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include "seslayer/fragment.hpp"
#include "seslayer/policy.hpp"
#include "seslayer/session.hpp"
#include "seslayer/session_cache.hpp"
#include "seslayer/transport.hpp"

namespace seslayer::session {

struct CommandContext {
  const Session& session;
  CommandLevel level;
  Bytes payload;
  SecureStream* stream;  // null for datagrams
  Address from;
};
using CommandHandler = std::function<void(CommandContext&)>;

struct ManagerStats {
  std::uint64_t establishes_initiated = 0;
  std::uint64_t establishes_served = 0;
  std::uint64_t establish_failures = 0;
  std::uint64_t resumes_sent = 0;
  std::uint64_t resumes_accepted = 0;
  std::uint64_t resumes_rejected = 0;
  std::uint64_t invalidations_sent = 0;
  std::uint64_t invalidations_received = 0;
  std::uint64_t datagrams_delivered = 0;
  std::uint64_t datagrams_dropped = 0;
};

inline constexpr Millis kDefaultIdleTimeout{60'000};

class SessionManager {
 public:
  SessionManager(Network& net, auth::SecurityPolicy policy, Address self, std::size_t cache_capacity = 0);
  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  Network& net() { return net_; }
  const auth::SecurityPolicy& policy() const { return policy_; }
  const Address& address() const { return self_; }
  SessionCache& cache() { return cache_; }
  std::string name() const;

  void set_handler(CommandHandler h) { handler_ = std::move(h); }
  void set_logger(std::function<void(std::string_view)> log) { log_ = std::move(log); }

  // ---- client side

  // Runs the establish exchange on `ch` and caches the client copy.
  Session establish(StreamChannel& ch, const Address& peer, CommandLevel level, Deadline d);
  // Same, on a connection of its own that is closed afterwards.
  Session establish(const Address& peer, CommandLevel level, Deadline d);

  struct Connection {
    std::unique_ptr<StreamChannel> channel;
    std::unique_ptr<SecureStream> stream;
    bool established = false;
  };
  // Builds the first payload once the session to use is known.
  using PayloadFn = std::function<Bytes(const Session& carrier)>;

  // Opens a protected command connection carrying the payload as its first
  // frame: a resume of a cached session, or establish followed by resume on
  // the same connection.
  Connection open(const Address& peer, CommandLevel level, ByteView payload, Deadline d);
  Connection open(const Address& peer, CommandLevel level, const PayloadFn& payload, Deadline d);

  struct CallResult {
    Bytes reply;
    Session session;
    bool established = false;
  };
  // open() plus one reply. On INVALIDATE the session is evicted and the call
  // retried once with a fresh establish.
  CallResult call(const Address& peer, CommandLevel level, ByteView payload, Deadline d);
  CallResult call(const Address& peer, CommandLevel level, const PayloadFn& payload, Deadline d);

  // One-way protected datagram; establishes over a stream first when no
  // session toward `peer` exists.
  void send_secure_udp(DatagramSocket& sock, const Address& peer, CommandLevel level, ByteView payload,
                       const PacingPolicy& pacing, Deadline d);

  // ---- server side

  void serve_connection(std::unique_ptr<StreamChannel> ch);
  void on_datagram(const Datagram& d);
  // Loops until the network stops (or the simulated task is cancelled).
  void run_listener(Listener& l);
  void run_datagrams(DatagramSocket& s);

  // Tells `client` over a fresh stream that `session_id` is unknown here.
  void invalidate_notify(const Address& client, const std::string& session_id);

  // Server side: invoked after a newly established session is cached.
  void set_on_established(std::function<void(const Session&)> f) { on_established_ = std::move(f); }

  ManagerStats stats() const;
  void set_idle_timeout(Millis t) { idle_timeout_ = t; }

 private:
  void serve_establish(StreamChannel& ch, const Bytes& hello_raw, const wire::RecordAd& hello);
  void serve_resume(StreamChannel& ch, const ResumeMessage& m);
  void handle_secure_datagram(const Address& from, ByteView bytes);
  void resume_on(Connection& c, const Session& s, CommandLevel level, const PayloadFn& payload, Deadline d);
  void log(std::string_view msg);
  template <class F>
  void bump(F f) {
    std::lock_guard lk(stats_mu_);
    f(stats_);
  }

  Network& net_;
  auth::SecurityPolicy policy_;
  Address self_;
  SessionCache cache_;
  CommandHandler handler_;
  std::function<void(std::string_view)> log_;
  std::function<void(const Session&)> on_established_;
  Millis idle_timeout_ = kDefaultIdleTimeout;

  std::mutex reasm_mu_;
  ReassemblyBuffer reasm_;
  std::mutex ids_mu_;
  DatagramIdGenerator ids_;

  mutable std::mutex stats_mu_;
  ManagerStats stats_;
};

}  // namespace seslayer::session
