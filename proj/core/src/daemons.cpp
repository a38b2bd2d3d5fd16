#include "seslayer/daemons.hpp"

#include <algorithm>

namespace seslayer::pool {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Collector: return "collector";
    case Role::Schedd: return "schedd";
    case Role::Startd: return "startd";
  }
  return "?";
}

std::optional<Role> parse_role(std::string_view s) {
  for (auto r : {Role::Collector, Role::Schedd, Role::Startd})
    if (s == to_string(r)) return r;
  return std::nullopt;
}

wire::RecordAd make_command(std::string_view name) {
  wire::RecordAd r;
  r.set_string("Command", std::string(name));
  return r;
}

Bytes encode(const wire::RecordAd& r) { return wire::encode_record(r); }
wire::RecordAd decode(ByteView b) { return wire::decode_record(b); }

namespace {

wire::RecordAd ok() {
  wire::RecordAd r;
  r.set_int("Ok", 1);
  return r;
}

wire::RecordAd failed(const ErrorStack& es) {
  wire::RecordAd r;
  r.set_int("Ok", 0);
  r.set_string("Error", es.format());
  return r;
}

bool is_ok(const wire::RecordAd& r) {
  auto v = r.get("Ok");
  return v && r.require_int("Ok") == 1;
}

}  // namespace

// ---------------------------------------------------------------------------

Daemon::Daemon(Network& net, auth::SecurityPolicy policy, Address self)
    : net_(net), sec_(net, std::move(policy), std::move(self)) {
  sec_.set_handler([this](session::CommandContext& ctx) { dispatch(ctx); });
}

Daemon::~Daemon() { stop(); }

void Daemon::start() {
  listener_ = net_.listen(address());
  udp_ = net_.bind_datagram(address());
  const auto node = address().host;
  net_.spawn(node, [this] { sec_.run_listener(*listener_); });
  net_.spawn(node, [this] { sec_.run_datagrams(*udp_); });
}

void Daemon::stop() {
  if (listener_) listener_->close();
  if (udp_) udp_->close();
}

void Daemon::require_level(const session::CommandContext& ctx, CommandLevel needed) {
  if (ctx.level != needed)
    throw Error(errc::kAuthorizationDenied, subsys::kSession,
                "command requires " + std::string(auth::to_string(needed)) + " level");
}

void Daemon::dispatch(session::CommandContext& ctx) {
  std::optional<wire::RecordAd> reply;
  try {
    auto args = decode(ctx.payload);
    const auto command = args.require_string("Command");
    reply = handle(command, args, ctx);
  } catch (const Error& e) {
    reply = failed(e.stack());
  }
  if (reply && ctx.stream) ctx.stream->send(encode(*reply), Deadline::seconds(30));
}

// ---------------------------------------------------------------------------
// Collector

Collector::Collector(Network& net, auth::SecurityPolicy policy, Address self, CollectorOptions opts)
    : Daemon(net, std::move(policy), std::move(self)), opts_(opts) {}

void Collector::register_with(const Address& parent, Deadline d) {
  sec_.establish(parent, CommandLevel::Daemon, d);
  auto ad = make_command("ADVERTISE");
  ad.set_string("Name", name()).set_string("Address", address().to_string()).set_string("Type", "collector");
  auto r = decode(sec_.call(parent, CommandLevel::Daemon, encode(ad), d).reply);
  if (!is_ok(r))
    throw Error(errc::kProtocolError, subsys::kHarness,
                "parent collector refused advertisement: " + r.find_string("Error").value_or("?"));
}

std::vector<StartdAd> Collector::ads() const {
  std::lock_guard lk(mu_);
  std::vector<StartdAd> out;
  for (const auto& [_, ad] : ads_) out.push_back(ad);
  return out;
}

std::uint64_t Collector::matches() const {
  std::lock_guard lk(mu_);
  return matches_;
}

std::uint64_t Collector::tokens_delegated() const {
  std::lock_guard lk(mu_);
  return delegated_;
}

std::optional<wire::RecordAd> Collector::handle(const std::string& command, const wire::RecordAd& args,
                                                session::CommandContext& ctx) {
  if (command == "ADVERTISE") {
    require_level(ctx, CommandLevel::Daemon);
    auto r = advertise(args, ctx);
    if (!ctx.stream) return std::nullopt;
    return r;
  }
  if (command == "MATCH") {
    require_level(ctx, CommandLevel::Daemon);
    return match(ctx);
  }
  if (command == "QUERY") {
    require_level(ctx, CommandLevel::Read);
    std::lock_guard lk(mu_);
    wire::RecordAd list;
    for (const auto& [name, ad] : ads_) list.set_string(name, ad.address.to_string());
    auto r = ok();
    r.set_int("Count", static_cast<std::int64_t>(ads_.size())).set_record("Ads", std::move(list));
    return r;
  }
  throw Error(errc::kProtocolError, subsys::kHarness, "unknown command " + command);
}

wire::RecordAd Collector::advertise(const wire::RecordAd& args, session::CommandContext& ctx) {
  StartdAd ad;
  ad.name = args.require_string("Name");
  ad.address = Address::parse(args.require_string("Address"));
  ad.type = args.find_string("Type").value_or("startd");
  ad.updated = net_.clock().now();
  if (ad.address != ctx.session.origin)
    throw Error(errc::kAuthorizationDenied, subsys::kHarness,
                "advertised address " + ad.address.to_string() + " differs from the session origin " +
                    ctx.session.origin.to_string());
  if (args.contains("ClaimToken")) ad.claim = session::unwrap_token(args.require_bytes("ClaimToken"), ctx.session,
                                                                   net_.clock().now());
  std::lock_guard lk(mu_);
  auto it = ads_.find(ad.name);
  if (it == ads_.end()) {
    if (ad.type == "startd") unmatched_.push_back(ad.name);
    ads_.emplace(ad.name, std::move(ad));
  } else {
    it->second.updated = ad.updated;
    it->second.address = ad.address;
    if (ad.claim) it->second.claim = std::move(ad.claim);
  }
  return ok();
}

wire::RecordAd Collector::match(session::CommandContext& ctx) {
  std::optional<StartdAd> ad;
  {
    std::lock_guard lk(mu_);
    if (unmatched_.empty())
      throw Error(errc::kProtocolError, subsys::kHarness, "no unclaimed startd available");
    ad = ads_.at(unmatched_.front());
    unmatched_.pop_front();
    ++matches_;
  }
  auto r = ok();
  r.set_string("StartdName", ad->name).set_string("StartdAddress", ad->address.to_string());
  // The requester is checked against the current policy, not the snapshot
  // taken when its session was established.
  if (opts_.delegation && ad->claim &&
      auth::authorize(sec_.policy(), ctx.session.canonical_identity, CommandLevel::Daemon) ==
          auth::Decision::Allow) {
    auto claim = *ad->claim;
    claim.origin = ad->address;
    r.set_bytes("ClaimToken", session::delegate(ctx.session, claim, net_.random(), net_.clock().now()));
    std::lock_guard lk(mu_);
    ++delegated_;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Startd

Startd::Startd(Network& net, auth::SecurityPolicy policy, Address self, StartdOptions opts)
    : Daemon(net, std::move(policy), std::move(self)), opts_(std::move(opts)) {}

session::Session Startd::mint_claim() {
  const auto& p = sec_.policy();
  session::Session c;
  c.session_id = session::new_session_id(net_.random());
  c.key = crypto::generate_session_key(net_.random());
  c.peer_claim = "claim:" + name();
  c.auth_method = "DELEGATED";
  c.canonical_identity = auth::map_identity(p.map_rules, c.peer_claim);
  c.authz_snapshot = p.authz_snapshot();
  c.mode = p.require_encryption ? auth::ProtectionMode::FullEncrypt : auth::ProtectionMode::MacOnly;
  const auto& reg = crypto::SuiteRegistry::builtin();
  for (const auto& s : p.allowed_suites) {
    const auto* d = reg.find_suite(s);
    if (!d || (c.mode == auth::ProtectionMode::FullEncrypt && !d->capabilities.encryption)) continue;
    c.suite = s;
    break;
  }
  if (c.suite.empty())
    throw Error(errc::kConfigError, subsys::kConfig, "no suite satisfies the policy for a claim session");
  c.established_at = net_.clock().now();
  c.lifetime = p.session_lifetime;
  c.valid_for_levels = auth::allowed_levels(p, c.canonical_identity);
  sec_.cache().insert(c, session::SessionRole::Server);
  return c;
}

void Startd::startup(Deadline d) {
  for (int i = 0; i < opts_.startup_sessions; ++i) sec_.establish(opts_.collector, CommandLevel::Daemon, d);
  std::optional<session::Session> claim;
  if (opts_.mint_claim) claim = mint_claim();
  auto build = [&](const session::Session& carrier) {
    auto ad = make_command("ADVERTISE");
    ad.set_string("Name", name()).set_string("Address", address().to_string()).set_string("Type", "startd");
    if (claim) ad.set_bytes("ClaimToken", session::delegate(carrier, *claim, net_.random(), net_.clock().now()));
    return encode(ad);
  };
  auto r = decode(sec_.call(opts_.collector, CommandLevel::Daemon, build, d).reply);
  if (!is_ok(r))
    throw Error(errc::kProtocolError, subsys::kHarness,
                "collector refused advertisement: " + r.find_string("Error").value_or("?"));
}

void Startd::send_update(const PacingPolicy& pacing, Deadline d) {
  auto ad = make_command("ADVERTISE");
  ad.set_string("Name", name()).set_string("Address", address().to_string()).set_string("Type", "startd");
  if (!datagram_socket())
    throw Error(errc::kConfigError, subsys::kHarness, "startd must be started before sending updates");
  sec_.send_secure_udp(*datagram_socket(), opts_.collector, CommandLevel::Daemon, encode(ad), pacing, d);
}

std::uint64_t Startd::claims_activated() const {
  std::lock_guard lk(mu_);
  return claimed_by_.size();
}

std::vector<std::string> Startd::claimed_by() const {
  std::lock_guard lk(mu_);
  return claimed_by_;
}

std::optional<wire::RecordAd> Startd::handle(const std::string& command, const wire::RecordAd&,
                                             session::CommandContext& ctx) {
  if (command == "ACTIVATE_CLAIM") {
    require_level(ctx, CommandLevel::Write);
    {
      std::lock_guard lk(mu_);
      claimed_by_.push_back(ctx.session.canonical_identity);
    }
    auto r = ok();
    r.set_string("Startd", name());
    return r;
  }
  if (command == "QUERY") {
    require_level(ctx, CommandLevel::Read);
    auto r = ok();
    r.set_string("Name", name()).set_int("Claims", static_cast<std::int64_t>(claims_activated()));
    return r;
  }
  throw Error(errc::kProtocolError, subsys::kHarness, "unknown command " + command);
}

// ---------------------------------------------------------------------------
// Schedd

Schedd::Schedd(Network& net, auth::SecurityPolicy policy, Address self, Address collector)
    : Daemon(net, std::move(policy), std::move(self)), collector_(std::move(collector)) {}

ContactResult Schedd::match_and_activate(Deadline d) {
  ContactResult res;
  try {
    auto m = sec_.call(collector_, CommandLevel::Daemon, encode(make_command("MATCH")), d);
    auto r = decode(m.reply);
    if (!is_ok(r)) {
      res.error = r.find_string("Error").value_or("match failed");
      return res;
    }
    res.startd = r.require_string("StartdName");
    const auto startd = Address::parse(r.require_string("StartdAddress"));
    if (r.contains("ClaimToken")) {
      session::import_token(r.require_bytes("ClaimToken"), m.session, sec_.cache());
      res.delegated = true;
    }
    auto a = decode(sec_.call(startd, CommandLevel::Write, encode(make_command("ACTIVATE_CLAIM")), d).reply);
    if (!is_ok(a)) {
      res.error = a.find_string("Error").value_or("activation failed");
      return res;
    }
    res.ok = true;
  } catch (const Error& e) {
    res.error = e.stack().format();
  }
  return res;
}

std::optional<wire::RecordAd> Schedd::handle(const std::string& command, const wire::RecordAd&,
                                             session::CommandContext& ctx) {
  if (command == "QUERY") {
    require_level(ctx, CommandLevel::Read);
    auto r = ok();
    r.set_string("Name", name());
    return r;
  }
  throw Error(errc::kProtocolError, subsys::kHarness, "unknown command " + command);
}

}  // namespace seslayer::pool
