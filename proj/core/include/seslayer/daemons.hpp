#pragma once

// Pool roles: a collector (directory and matchmaker), startds (execution
// nodes that advertise themselves) and schedds (job queues that claim
// startds). They are written against Network only, so the same objects run
// as simulated nodes and as live daemons.
//
// Commands are records with a "Command" attribute, sent as the first payload
// of a resumed session. Replies carry "Ok" (1/0) and, on failure, "Error".
//
//   ADVERTISE       DAEMON  Name, Address, Type [, ClaimToken]
//   MATCH           DAEMON  -> StartdName, StartdAddress [, ClaimToken]
//   QUERY           READ    -> Count, Ads {name: address}
//   ACTIVATE_CLAIM  WRITE   -> Startd

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seslayer/policy.hpp"
#include "seslayer/secman.hpp"
#include "seslayer/transport.hpp"
#include "seslayer/wire.hpp"

namespace seslayer::pool {

using auth::CommandLevel;

enum class Role { Collector, Schedd, Startd };
std::string_view to_string(Role r);
std::optional<Role> parse_role(std::string_view s);

wire::RecordAd make_command(std::string_view name);
Bytes encode(const wire::RecordAd& r);
wire::RecordAd decode(ByteView b);

class Daemon {
 public:
  Daemon(Network& net, auth::SecurityPolicy policy, Address self);
  virtual ~Daemon();
  Daemon(const Daemon&) = delete;
  Daemon& operator=(const Daemon&) = delete;

  // Binds the stream and datagram ports at the daemon address and spawns the
  // accept and datagram loops.
  void start();
  void stop();

  session::SessionManager& security() { return sec_; }
  const Address& address() const { return sec_.address(); }
  std::string name() const { return sec_.name(); }
  DatagramSocket* datagram_socket() { return udp_.get(); }

 protected:
  // Returns the reply, or nullopt for one-way commands.
  virtual std::optional<wire::RecordAd> handle(const std::string& command, const wire::RecordAd& args,
                                               session::CommandContext& ctx) = 0;
  static void require_level(const session::CommandContext& ctx, CommandLevel needed);

  Network& net_;
  session::SessionManager sec_;

 private:
  void dispatch(session::CommandContext& ctx);

  std::unique_ptr<Listener> listener_;
  std::unique_ptr<DatagramSocket> udp_;
};

struct StartdAd {
  std::string name;
  Address address;
  std::string type;
  std::optional<session::Session> claim;
  Micros updated{0};
};

struct CollectorOptions {
  // Hand out claim sessions on MATCH. Off forces direct authentication.
  bool delegation = true;
};

class Collector : public Daemon {
 public:
  Collector(Network& net, auth::SecurityPolicy policy, Address self, CollectorOptions opts = {});

  // Joins a parent collector: one establish, then an ADVERTISE.
  void register_with(const Address& parent, Deadline d);

  std::vector<StartdAd> ads() const;
  std::uint64_t matches() const;
  std::uint64_t tokens_delegated() const;

 protected:
  std::optional<wire::RecordAd> handle(const std::string& command, const wire::RecordAd& args,
                                       session::CommandContext& ctx) override;

 private:
  wire::RecordAd advertise(const wire::RecordAd& args, session::CommandContext& ctx);
  wire::RecordAd match(session::CommandContext& ctx);

  CollectorOptions opts_;
  mutable std::mutex mu_;
  std::map<std::string, StartdAd> ads_;
  std::deque<std::string> unmatched_;
  std::uint64_t matches_ = 0;
  std::uint64_t delegated_ = 0;
};

struct StartdOptions {
  Address collector;
  int startup_sessions = 4;
  // Mint a claim session and deposit it with the collector.
  bool mint_claim = true;
};

class Startd : public Daemon {
 public:
  Startd(Network& net, auth::SecurityPolicy policy, Address self, StartdOptions opts);

  // Startup sessions with the collector, then the advertisement.
  void startup(Deadline d);
  // Datagram keep-alive advertisement over an existing session.
  void send_update(const PacingPolicy& pacing, Deadline d);

  std::uint64_t claims_activated() const;
  std::vector<std::string> claimed_by() const;

 protected:
  std::optional<wire::RecordAd> handle(const std::string& command, const wire::RecordAd& args,
                                       session::CommandContext& ctx) override;

 private:
  session::Session mint_claim();

  StartdOptions opts_;
  mutable std::mutex mu_;
  std::vector<std::string> claimed_by_;
};

struct ContactResult {
  std::string startd;
  bool ok = false;
  bool delegated = false;
  std::string error;
};

class Schedd : public Daemon {
 public:
  Schedd(Network& net, auth::SecurityPolicy policy, Address self, Address collector);

  // Asks the collector for a match, then activates the claim at the startd.
  // Failures are reported in the result, not thrown.
  ContactResult match_and_activate(Deadline d);

 protected:
  std::optional<wire::RecordAd> handle(const std::string& command, const wire::RecordAd& args,
                                       session::CommandContext& ctx) override;

 private:
  Address collector_;
};

}  // namespace seslayer::pool
