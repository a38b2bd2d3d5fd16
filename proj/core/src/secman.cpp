#include "seslayer/secman.hpp"

#include <algorithm>

namespace seslayer::session {

namespace {

struct GrantKeys {
  Bytes enc;
  Bytes mac;
};

GrantKeys grant_keys(ByteView dh_secret, const auth::KeyContext& k, ByteView binding) {
  Bytes ikm(dh_secret.begin(), dh_secret.end());
  put_bytes(ikm, k.method_key);
  Bytes salt = k.client_nonce;
  put_bytes(salt, k.server_nonce);
  Bytes info = to_bytes("grant");
  put_bytes(info, binding);
  auto okm = crypto::hkdf_sha256(ikm, salt, info, 2 * crypto::kSessionKeySize);
  return {Bytes(okm.begin(), okm.begin() + crypto::kSessionKeySize),
          Bytes(okm.begin() + crypto::kSessionKeySize, okm.end())};
}

Bytes wrap_grant(const Session& s, const GrantKeys& gk, RandomSource& rng) {
  wire::MessageFrame f;
  f.flags = wire::kFrameEncrypted | wire::kFrameMacPresent;
  f.body = crypto::SuiteRegistry::builtin().encrypt(gk.enc, wire::encode_record(s.to_record()),
                                                     crypto::kAes192Ctr, rng);
  f.mac = crypto::hmac_sha256(gk.mac, f.body);
  return wire::encode_frame(f);
}

Session unwrap_grant(ByteView grant, const GrantKeys& gk) {
  auto reject = [](std::string why) { return Error(errc::kIntegrityFailure, subsys::kSession, std::move(why)); };
  auto d = wire::decode_frame_prefix(grant);
  if (d.consumed != grant.size() || !d.frame.mac) throw reject("malformed session grant");
  if (!equal_ct(*d.frame.mac, crypto::hmac_sha256(gk.mac, d.frame.body))) throw reject("session grant MAC mismatch");
  return Session::from_record(wire::decode_record(
      crypto::SuiteRegistry::builtin().decrypt(gk.enc, d.frame.body, crypto::kAes192Ctr)));
}

Bytes key_confirmation(const Session& s) {
  Bytes in = to_bytes("confirm");
  put_bytes(in, as_bytes(s.session_id));
  return crypto::hmac_sha256(subkeys(s).mac.view(), in);
}

Bytes transcript_hash(const Bytes& hello_raw, const Bytes& reply_raw) {
  Bytes t = hello_raw;
  put_bytes(t, reply_raw);
  return crypto::sha256(t);
}

}  // namespace

SessionManager::SessionManager(Network& net, auth::SecurityPolicy policy, Address self, std::size_t cache_capacity)
    : net_(net),
      policy_(std::move(policy)),
      self_(std::move(self)),
      cache_(net.clock(), cache_capacity),
      ids_(net.random().next_u64()) {
  policy_.validate();
}

std::string SessionManager::name() const { return policy_.name.empty() ? self_.host : policy_.name; }

void SessionManager::log(std::string_view msg) {
  if (log_) log_(msg);
}

ManagerStats SessionManager::stats() const {
  std::lock_guard lk(stats_mu_);
  return stats_;
}

// ---------------------------------------------------------------------------
// Client side

Session SessionManager::establish(StreamChannel& ch, const Address& peer, CommandLevel level, Deadline d) {
  bump([](auto& s) { ++s.establishes_initiated; });
  try {
    auto& rng = net_.random();
    const auto offer = auth::make_offer(policy_);
    crypto::X25519KeyPair kp(rng);

    wire::RecordAd hello = offer.to_record();
    hello.set_string("Step", "hello")
        .set_string("Claim", name())
        .set_string("DaemonAddress", self_.to_string())
        .set_bytes("DhPublic", kp.public_key())
        .set_string("Command", std::string(auth::to_string(level)));
    Bytes hello_raw = auth::send_record(ch, MessageKind::Establish, hello, d);
    Bytes reply_raw;
    auto reply = auth::receive_record(ch, MessageKind::Establish, d, &reply_raw);
    auth::throw_if_failure(reply);
    if (reply.require_string("Step") != "negotiated")
      throw Error(errc::kProtocolError, subsys::kSession, "expected negotiation reply");

    auth::Negotiated n;
    n.method = reply.require_string("Method");
    n.suite = reply.require_string("Suite");
    auto mode = auth::parse_mode(reply.require_string("Mode"));
    if (!mode || std::find(offer.methods.begin(), offer.methods.end(), n.method) == offer.methods.end() ||
        std::find(offer.suites.begin(), offer.suites.end(), n.suite) == offer.suites.end() ||
        (offer.require_encryption && *mode != ProtectionMode::FullEncrypt))
      throw Error(errc::kNegotiationFailed, subsys::kSession, "server chose features outside the offer");
    n.mode = *mode;

    const Bytes binding = transcript_hash(hello_raw, reply_raw);
    const Bytes dh = kp.shared_secret(reply.require_bytes("DhPublic"));

    Session s;
    auth::AuthHooks hooks;
    hooks.client_final_in = [&](const wire::RecordAd& in, const auth::KeyContext& k) {
      s = unwrap_grant(in.require_bytes("Grant"), grant_keys(dh, k, binding));
      if (s.suite != n.suite || s.mode != n.mode || s.canonical_identity != k.outcome->canonical_identity)
        throw Error(errc::kProtocolError, subsys::kSession, "session grant disagrees with the negotiation");
      s.origin = peer;
    };
    hooks.client_final_out = [&](wire::RecordAd& out, const auth::KeyContext&) {
      out.set_bytes("KeyConfirm", key_confirmation(s));
    };
    auth::authenticate({net_, ch, d, binding, n}, policy_, auth::Role::Client, hooks);
    cache_.insert(s, SessionRole::Client);
    log("established session " + s.session_id + " with " + peer.to_string() + " as " + s.canonical_identity);
    return s;
  } catch (Error& e) {
    bump([](auto& s) { ++s.establish_failures; });
    e.stack().push(e.code(), subsys::kSession, "cannot establish a session with " + peer.to_string());
    throw;
  }
}

Session SessionManager::establish(const Address& peer, CommandLevel level, Deadline d) {
  auto ch = net_.connect(peer, d);
  OpScope op(net_.ledger(), net_.clock(), "establish");
  auto s = establish(*ch, peer, level, d);
  ch->close();
  return s;
}

void SessionManager::resume_on(Connection& c, const Session& s, CommandLevel level, const PayloadFn& payload,
                               Deadline d) {
  OpScope op(net_.ledger(), net_.clock(), "resume");
  if (s.expired(net_.clock().now()))
    throw Error(errc::kSessionExpired, subsys::kSession, "session " + s.session_id + " has expired");
  auto msg = make_resume(s, level, payload(s), net_.random());
  c.channel->write(encode_resume(msg), d);
  c.stream = std::make_unique<SecureStream>(*c.channel, s, msg.header.nonce, Direction::ClientToServer, 1, 0, net_);
  bump([](auto& st) { ++st.resumes_sent; });
}

SessionManager::Connection SessionManager::open(const Address& peer, CommandLevel level, const PayloadFn& payload,
                                                Deadline d) {
  Connection c;
  auto cached = cache_.find_for_peer(peer, level);
  c.channel = net_.connect(peer, d);
  if (!cached) {
    OpScope op(net_.ledger(), net_.clock(), "establish");
    cached = establish(*c.channel, peer, level, d);
    c.established = true;
  }
  // The cached session can expire during the connect round trip.
  if (!c.established && cached->expired(net_.clock().now())) {
    cache_.evict(cached->session_id);
    OpScope op(net_.ledger(), net_.clock(), "establish");
    cached = establish(*c.channel, peer, level, d);
    c.established = true;
  }
  resume_on(c, *cached, level, payload, d);
  return c;
}

SessionManager::Connection SessionManager::open(const Address& peer, CommandLevel level, ByteView payload,
                                                Deadline d) {
  Bytes copy(payload.begin(), payload.end());
  return open(peer, level, [&](const Session&) { return copy; }, d);
}

SessionManager::CallResult SessionManager::call(const Address& peer, CommandLevel level, const PayloadFn& payload,
                                                Deadline d) {
  for (int attempt = 0;; ++attempt) {
    auto c = open(peer, level, payload, d);
    try {
      OpScope op(net_.ledger(), net_.clock(), "command");
      CallResult r{c.stream->receive(d), c.stream->session(), c.established};
      c.channel->close();
      return r;
    } catch (SessionInvalidated& e) {
      cache_.evict(e.session_id());
      bump([](auto& s) { ++s.invalidations_received; });
      log("session " + e.session_id() + " invalidated by " + peer.to_string() + "; re-establishing");
      if (attempt > 0) throw;
    }
  }
}

SessionManager::CallResult SessionManager::call(const Address& peer, CommandLevel level, ByteView payload,
                                                Deadline d) {
  Bytes copy(payload.begin(), payload.end());
  return call(peer, level, [&](const Session&) { return copy; }, d);
}

void SessionManager::send_secure_udp(DatagramSocket& sock, const Address& peer, CommandLevel level,
                                     ByteView payload, const PacingPolicy& pacing, Deadline d) {
  auto s = cache_.find_for_peer(peer, level);
  if (!s) s = establish(peer, level, d);
  OpScope op(net_.ledger(), net_.clock(), "udp");
  if (s->expired(net_.clock().now()))
    throw Error(errc::kSessionExpired, subsys::kSession, "session " + s->session_id + " has expired");
  auto bytes = seal_datagram(*s, level, payload, net_.random());
  std::uint64_t id;
  {
    std::lock_guard lk(ids_mu_);
    id = ids_.next();
  }
  send_paced(fragment(bytes, pacing, id), pacing, sock, peer, net_);
}

// ---------------------------------------------------------------------------
// Server side

void SessionManager::serve_connection(std::unique_ptr<StreamChannel> ch) {
  const Deadline idle(idle_timeout_);
  for (;;) {
    std::uint8_t kind = 0;
    try {
      kind = auth::read_kind(*ch, idle);
    } catch (const TransportError&) {
      return;
    }
    try {
      switch (static_cast<MessageKind>(kind)) {
        case MessageKind::Establish: {
          auto frame = auth::read_frame(*ch, idle);
          Bytes raw;
          put_u8(raw, kind);
          wire::encode_frame_to(frame, raw);
          if (frame.flags != wire::kFramePlain)
            throw Error(errc::kProtocolError, subsys::kSession, "handshake frame must be plain");
          serve_establish(*ch, raw, wire::decode_record(frame.body));
          continue;
        }
        case MessageKind::Resume:
          serve_resume(*ch, read_resume(*ch, idle));
          return;
        case MessageKind::Invalidate: {
          auto sid = read_invalidate(*ch, idle);
          cache_.evict(sid);
          bump([](auto& s) { ++s.invalidations_received; });
          log("peer " + ch->peer_address().to_string() + " invalidated session " + sid);
          return;
        }
        default:
          throw Error(errc::kProtocolError, subsys::kSession, "unknown message kind " + std::to_string(kind));
      }
    } catch (const Error& e) {
      log("connection from " + ch->peer_address().to_string() + " dropped:\n" + e.stack().format());
      return;
    }
  }
}

void SessionManager::serve_establish(StreamChannel& ch, const Bytes& hello_raw, const wire::RecordAd& hello) {
  OpScope op(net_.ledger(), net_.clock(), "serve-establish");
  const Deadline d(idle_timeout_);
  try {
    auth::Negotiated n;
    Bytes reply_raw;
    std::unique_ptr<crypto::X25519KeyPair> kp;
    Address origin;
    CommandLevel level{};
    std::string claim;
    Bytes peer_share;
    try {
      if (hello.require_string("Step") != "hello")
        throw Error(errc::kProtocolError, subsys::kSession, "expected hello");
      auto offer = auth::ClientOffer::from_record(hello);
      claim = hello.require_string("Claim");
      origin = Address::parse(hello.require_string("DaemonAddress"));
      auto lv = auth::parse_level(hello.require_string("Command"));
      if (!lv) throw Error(errc::kProtocolError, subsys::kSession, "unknown command level");
      level = *lv;
      peer_share = hello.require_bytes("DhPublic");
      n = auth::negotiate(policy_, offer);
      kp = std::make_unique<crypto::X25519KeyPair>(net_.random());
    } catch (const Error& e) {
      auth::send_failure(ch, e, d);
      throw;
    }
    wire::RecordAd reply;
    reply.set_string("Step", "negotiated")
        .set_string("Method", n.method)
        .set_string("Suite", n.suite)
        .set_string("Mode", std::string(auth::to_string(n.mode)))
        .set_bytes("DhPublic", kp->public_key());
    reply_raw = auth::send_record(ch, MessageKind::Establish, reply, d);

    const Bytes binding = transcript_hash(hello_raw, reply_raw);
    const Bytes dh = kp->shared_secret(peer_share);

    Session s;
    auth::AuthHooks hooks;
    hooks.server_final_out = [&](wire::RecordAd& out, const auth::KeyContext& k) {
      const auto& identity = k.outcome->canonical_identity;
      auto levels = auth::allowed_levels(policy_, identity);
      if (!levels.contains(level))
        throw Error(errc::kAuthorizationDenied, subsys::kAuth,
                    "identity '" + identity + "' is not authorized for " + std::string(auth::to_string(level)));
      s.session_id = new_session_id(net_.random());
      s.key = crypto::generate_session_key(net_.random());
      s.peer_claim = claim;
      s.auth_method = n.method;
      s.canonical_identity = identity;
      s.authz_snapshot = policy_.authz_snapshot();
      s.suite = n.suite;
      s.mode = n.mode;
      s.established_at = net_.clock().now();
      s.lifetime = policy_.session_lifetime;
      s.valid_for_levels = levels;
      out.set_bytes("Grant", wrap_grant(s, grant_keys(dh, k, binding), net_.random()));
      s.origin = origin;
    };
    hooks.server_final_in = [&](const wire::RecordAd& in, const auth::KeyContext&) {
      if (!equal_ct(in.require_bytes("KeyConfirm"), key_confirmation(s)))
        throw Error(errc::kAuthenticationFailed, subsys::kSession, "key confirmation mismatch");
      cache_.insert(s, SessionRole::Server);
      if (on_established_) on_established_(s);
    };
    auth::authenticate({net_, ch, d, binding, n}, policy_, auth::Role::Server, hooks);
    net_.ledger().record_establish_served(context::node());
    bump([](auto& st) { ++st.establishes_served; });
    log("established session " + s.session_id + " for " + s.canonical_identity + " at " + origin.to_string());
  } catch (Error& e) {
    bump([](auto& st) { ++st.establish_failures; });
    e.stack().push(e.code(), subsys::kSession,
                   "cannot establish a session for " + ch.peer_address().to_string());
    throw;
  }
}

void SessionManager::serve_resume(StreamChannel& ch, const ResumeMessage& m) {
  OpScope op(net_.ledger(), net_.clock(), "serve-resume");
  const Deadline d(idle_timeout_);
  const auto& sid = m.header.session_id;
  auto s = cache_.lookup(sid);
  if (!s) {
    bump([](auto& st) { ++st.invalidations_sent; });
    log("resume for unknown session " + sid + " from " + ch.peer_address().to_string() + "; invalidating");
    ch.write(encode_invalidate(sid), d);
    return;
  }
  auto reject = [&](std::int64_t code, std::string why) {
    bump([](auto& st) { ++st.resumes_rejected; });
    ErrorStack es;
    es.push(code, subsys::kSession, std::move(why));
    es.push(errc::kAuthenticationFailed, subsys::kSession, "resume of session " + sid + " rejected");
    throw Error(es);
  };
  if (!verify_resume(*s, m)) reject(errc::kAuthenticationFailed, "resume proof mismatch");
  if (!cache_.note_nonce(sid, m.header.nonce)) reject(errc::kAuthenticationFailed, "replayed resume nonce");
  Bytes plain;
  try {
    plain = session::open(*s, Direction::ClientToServer, 0, m.header.nonce, m.first);
  } catch (const Error& e) {
    reject(e.code(), e.stack().top().message);
  }
  auto [level, payload] = split_command(plain);
  if (!s->valid_for(level))
    reject(errc::kAuthorizationDenied, "session not valid for " + std::string(auth::to_string(level)));
  bump([](auto& st) { ++st.resumes_accepted; });
  SecureStream stream(ch, *s, m.header.nonce, Direction::ServerToClient, 0, 1, net_);
  CommandContext ctx{*s, level, std::move(payload), &stream, s->origin};
  if (handler_) handler_(ctx);
}

void SessionManager::on_datagram(const Datagram& d) {
  std::optional<Bytes> whole;
  try {
    auto f = decode_fragment(d.data);
    std::lock_guard lk(reasm_mu_);
    whole = reasm_.reassemble(d.from.to_string(), f.header, f.payload, net_.clock().now());
  } catch (const Error& e) {
    bump([](auto& st) { ++st.datagrams_dropped; });
    log("dropped fragment from " + d.from.to_string() + ":\n" + e.stack().format());
    return;
  }
  if (whole) handle_secure_datagram(d.from, *whole);
}

void SessionManager::handle_secure_datagram(const Address& from, ByteView bytes) {
  OpScope op(net_.ledger(), net_.clock(), "serve-datagram");
  auto drop = [&](const std::string& why) {
    bump([](auto& st) { ++st.datagrams_dropped; });
    log("dropped datagram from " + from.to_string() + ": " + why);
  };
  ResumeMessage m;
  try {
    m = decode_resume(bytes);
  } catch (const Error& e) {
    return drop(e.stack().top().message);
  }
  auto s = cache_.lookup(m.header.session_id);
  if (!s) {
    drop("unknown session " + m.header.session_id);
    bump([](auto& st) { ++st.invalidations_sent; });
    net_.spawn(context::node(), [this, from, sid = m.header.session_id] { invalidate_notify(from, sid); });
    return;
  }
  if (!verify_resume(*s, m)) return drop("proof mismatch");
  if (!cache_.note_nonce(s->session_id, m.header.nonce)) return drop("replayed nonce");
  Bytes plain;
  try {
    plain = session::open(*s, Direction::ClientToServer, 0, m.header.nonce, m.first);
    auto [level, payload] = split_command(plain);
    if (!s->valid_for(level)) return drop("session not valid for the command level");
    bump([](auto& st) { ++st.datagrams_delivered; });
    CommandContext ctx{*s, level, std::move(payload), nullptr, from};
    if (handler_) handler_(ctx);
  } catch (const Error& e) {
    return drop(e.stack().format());
  }
}

void SessionManager::invalidate_notify(const Address& client, const std::string& session_id) {
  OpScope op(net_.ledger(), net_.clock(), "invalidate");
  try {
    auto ch = net_.connect(client, Deadline::seconds(5));
    ch->write(encode_invalidate(session_id), Deadline::seconds(5));
    ch->close();
    log("sent invalidation of " + session_id + " to " + client.to_string());
  } catch (const Error& e) {
    log("could not notify " + client.to_string() + " about session " + session_id + ":\n" + e.stack().format());
  }
}

void SessionManager::run_listener(Listener& l) {
  while (!net_.stopping()) {
    auto ch = l.accept(Deadline::ms(200));
    if (!ch) continue;
    auto shared = std::make_shared<std::unique_ptr<StreamChannel>>(std::move(ch));
    net_.spawn(context::node(), [this, shared] { serve_connection(std::move(*shared)); });
  }
}

void SessionManager::run_datagrams(DatagramSocket& s) {
  while (!net_.stopping()) {
    auto d = s.receive(Deadline::ms(200));
    if (d) on_datagram(*d);
  }
}

}  // namespace seslayer::session
