#include "seslayer/auth.hpp"

#include <algorithm>

namespace seslayer::auth {

namespace {

Error protocol_error(std::string msg) { return Error(errc::kProtocolError, subsys::kAuth, std::move(msg)); }

Error method_error(std::string_view method, std::string msg) {
  return Error(errc::kAuthenticationFailed, method, std::move(msg));
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto comma = s.find(',', start);
    if (comma == std::string_view::npos) comma = s.size();
    if (comma > start) out.emplace_back(s.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

Bytes proof_input(std::string_view role, std::string_view method, ByteView cn, ByteView sn,
                  ByteView binding, std::string_view credential, std::string_view identity) {
  Bytes b;
  for (ByteView part : {as_bytes(role), as_bytes(method), cn, sn, binding, as_bytes(credential),
                        as_bytes(identity)}) {
    put_u32(b, static_cast<std::uint32_t>(part.size()));
    put_bytes(b, part);
  }
  return b;
}

Bytes password_key(std::string_view user, std::string_view secret) {
  return crypto::hkdf_sha256(as_bytes(secret), as_bytes("seslayer-password"), as_bytes(user), 32);
}

Bytes token_key(std::string_view secret) {
  return crypto::hkdf_sha256(as_bytes(secret), as_bytes("seslayer-token"), {}, 32);
}

std::string token_id(std::string_view secret) {
  return to_hex(crypto::sha256(as_bytes(secret))).substr(0, 16);
}

bool keyed(std::string_view method) { return method != kClaimToBe; }

Bytes require_nonce(const wire::RecordAd& r) {
  auto n = r.require_bytes("Nonce");
  if (n.size() != kNonceSize) throw protocol_error("nonce has wrong size");
  return n;
}

const std::string& require_step(const wire::RecordAd& r, std::string_view expected) {
  const auto& step = r.require_string("Step");
  if (step != expected) throw protocol_error("expected step '" + std::string(expected) + "', got '" + step + "'");
  return step;
}

AuthOutcome run_client(const AuthExchange& ex, const SecurityPolicy& local, const AuthHooks& hooks) {
  auto& ch = ex.channel;
  auto& rng = ex.net.random();
  const std::string& method = ex.negotiated.method;

  std::string credential = client_credential(local, method);
  wire::RecordAd first;
  first.set_string("Step", "auth").set_string("Method", method);
  Bytes key;
  if (method == kPassword) {
    const auto& [user, secret] = *local.credentials.password;
    first.set_string("User", user);
    key = password_key(user, secret);
  } else if (method == kTokenFile) {
    first.set_string("TokenId", token_id(local.credentials.token->second));
    key = token_key(local.credentials.token->second);
  } else if (method == kGsi) {
    first.set_string("Subject", local.credentials.gsi->first);
    try {
      key = from_hex(local.credentials.gsi->second);
    } catch (const std::exception&) {
      throw method_error(method, "malformed certificate");
    }
  } else {
    first.set_string("Claim", credential.substr(credential.find(':') + 1));
  }
  Bytes cn = rng.bytes(kNonceSize);
  first.set_bytes("Nonce", cn);
  send_record(ch, MessageKind::Establish, first, ex.deadline);

  wire::RecordAd reply;
  for (;;) {
    reply = receive_record(ch, MessageKind::Establish, ex.deadline);
    throw_if_failure(reply);
    const auto& step = reply.require_string("Step");
    if (step == "final") break;
    if (step != "pad") throw protocol_error("unexpected step '" + step + "'");
    wire::RecordAd pad;
    pad.set_string("Step", "pad").set_bytes("Pad", rng.bytes(64));
    send_record(ch, MessageKind::Establish, pad, ex.deadline);
  }

  Bytes sn = require_nonce(reply);
  AuthOutcome out;
  out.method_used = method;
  out.peer_credential = reply.require_string("PeerCredential");
  out.canonical_identity = reply.require_string("CanonicalIdentity");
  out.server_told_client = out.canonical_identity;
  out.negotiated = ex.negotiated;

  auto reject = [&](Error e) {
    send_failure(ch, e, ex.deadline);
    throw e;
  };
  if (keyed(method)) {
    auto expected = crypto::hmac_sha256(key, proof_input("server", method, cn, sn, ex.binding,
                                                          out.peer_credential, out.canonical_identity));
    auto proof = reply.require_bytes("Proof");
    if (!equal_ct(proof, expected)) reject(method_error(method, "server proof mismatch"));
  }

  KeyContext kc{method, key, cn, sn, &out};
  if (hooks.client_final_in) {
    try {
      hooks.client_final_in(reply, kc);
    } catch (Error& e) {
      send_failure(ch, e, ex.deadline);
      throw;
    }
  }

  ex.net.consume_cpu(local.cost(method).client_cpu);
  wire::RecordAd fin;
  fin.set_string("Step", "final");
  if (keyed(method))
    fin.set_bytes("Proof", crypto::hmac_sha256(key, proof_input("client", method, cn, sn, ex.binding,
                                                                out.peer_credential,
                                                                out.canonical_identity)));
  if (hooks.client_final_out) hooks.client_final_out(fin, kc);
  send_record(ch, MessageKind::Establish, fin, ex.deadline);
  ex.net.ledger().record_authentication(context::node(), ch.peer_address().host, context::op());
  return out;
}

AuthOutcome run_server(const AuthExchange& ex, const SecurityPolicy& local, const AuthHooks& hooks) {
  auto& ch = ex.channel;
  auto& rng = ex.net.random();
  const std::string& method = ex.negotiated.method;

  auto first = receive_record(ch, MessageKind::Establish, ex.deadline);
  throw_if_failure(first);
  require_step(first, "auth");
  if (first.require_string("Method") != method) throw protocol_error("client switched authentication method");

  std::string credential;
  Bytes key;
  if (method == kPassword) {
    const auto& user = first.require_string("User");
    auto it = local.passwords.find(user);
    if (it == local.passwords.end()) throw method_error(method, "unknown user '" + user + "'");
    credential = "password:" + user;
    key = password_key(user, it->second);
  } else if (method == kTokenFile) {
    const auto& id = first.require_string("TokenId");
    auto it = std::find_if(local.tokens.begin(), local.tokens.end(),
                           [&](const auto& kv) { return token_id(kv.second) == id; });
    if (it == local.tokens.end()) throw method_error(method, "token not recognized");
    credential = "token:" + it->first;
    key = token_key(it->second);
  } else if (method == kGsi) {
    const auto& subject = first.require_string("Subject");
    if (local.gsi_ca.empty()) throw method_error(method, "no certificate authority configured");
    credential = "gsi:" + subject;
    key = crypto::hmac_sha256(as_bytes(local.gsi_ca), as_bytes(subject));
  } else if (method == kClaimToBe) {
    credential = "claimtobe:" + first.require_string("Claim");
  } else {
    throw method_error(method, "unsupported method");
  }
  Bytes cn = require_nonce(first);
  const std::string identity = map_identity(local.map_rules, credential);

  const auto cost = local.cost(method);
  for (int i = 1; i < cost.round_trips; ++i) {
    wire::RecordAd pad;
    pad.set_string("Step", "pad").set_bytes("Pad", rng.bytes(64));
    send_record(ch, MessageKind::Establish, pad, ex.deadline);
    auto back = receive_record(ch, MessageKind::Establish, ex.deadline);
    throw_if_failure(back);
    require_step(back, "pad");
  }

  Bytes sn = rng.bytes(kNonceSize);
  AuthOutcome out{method, credential, identity, ex.negotiated, identity};
  KeyContext kc{method, key, cn, sn, &out};

  wire::RecordAd fin;
  fin.set_string("Step", "final")
      .set_bytes("Nonce", sn)
      .set_string("PeerCredential", credential)
      .set_string("CanonicalIdentity", identity);
  if (keyed(method))
    fin.set_bytes("Proof", crypto::hmac_sha256(key, proof_input("server", method, cn, sn, ex.binding,
                                                                credential, identity)));
  if (hooks.server_final_out) hooks.server_final_out(fin, kc);
  send_record(ch, MessageKind::Establish, fin, ex.deadline);

  auto last = receive_record(ch, MessageKind::Establish, ex.deadline);
  throw_if_failure(last);
  require_step(last, "final");
  ex.net.consume_cpu(cost.server_cpu);
  if (keyed(method)) {
    auto expected = crypto::hmac_sha256(key, proof_input("client", method, cn, sn, ex.binding,
                                                          credential, identity));
    if (!equal_ct(last.require_bytes("Proof"), expected))
      throw method_error(method, "client proof mismatch");
  }
  if (hooks.server_final_in) hooks.server_final_in(last, kc);
  ex.net.ledger().record_authentication(context::node(), ch.peer_address().host, context::op());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::uint8_t read_kind(StreamChannel& ch, Deadline d) {
  std::uint8_t k = 0;
  ch.read_exact({&k, 1}, d);
  return k;
}

wire::MessageFrame read_frame(StreamChannel& ch, Deadline d) {
  Bytes raw = ch.read_n(wire::kFrameHeaderSize, d);
  const std::uint32_t len = get_u32(raw.data());
  if (len > kMaxStreamFrame)
    throw Error(errc::kOversize, subsys::kWire, "frame of " + std::to_string(len) + " bytes exceeds limit");
  const std::uint8_t flags = raw[4];
  raw.resize(wire::kFrameHeaderSize + len);
  if (len > 0) ch.read_exact({raw.data() + wire::kFrameHeaderSize, len}, d);
  if (flags & wire::kFrameMacPresent) {
    std::uint8_t maclen = 0;
    ch.read_exact({&maclen, 1}, d);
    raw.push_back(maclen);
    auto off = raw.size();
    raw.resize(off + maclen);
    if (maclen > 0) ch.read_exact({raw.data() + off, maclen}, d);
  }
  auto decoded = wire::decode_frame_prefix(raw);
  return std::move(decoded.frame);
}

Bytes send_record(StreamChannel& ch, MessageKind kind, const wire::RecordAd& rec, Deadline d) {
  Bytes out;
  put_u8(out, static_cast<std::uint8_t>(kind));
  wire::encode_frame_to(wire::MessageFrame{wire::kFramePlain, wire::encode_record(rec), std::nullopt}, out);
  ch.write(out, d);
  return out;
}

wire::RecordAd receive_record(StreamChannel& ch, MessageKind kind, Deadline d, Bytes* raw) {
  auto k = read_kind(ch, d);
  if (k != static_cast<std::uint8_t>(kind))
    throw protocol_error("expected message kind " + std::to_string(static_cast<int>(kind)) + ", got " +
                         std::to_string(k));
  auto frame = read_frame(ch, d);
  if (frame.flags != wire::kFramePlain) throw protocol_error("handshake frame must be plain");
  if (raw) {
    raw->clear();
    put_u8(*raw, k);
    wire::encode_frame_to(frame, *raw);
  }
  return wire::decode_record(frame.body);
}

void send_failure(StreamChannel& ch, const Error& e, Deadline d) noexcept {
  try {
    wire::RecordAd r;
    r.set_string("Step", std::string(kStepFailed))
        .set_int("Code", e.code())
        .set_string("Message", e.stack().top().rendered_message());
    send_record(ch, MessageKind::Establish, r, d);
  } catch (const std::exception&) {
  }
}

void throw_if_failure(const wire::RecordAd& msg) {
  auto step = msg.find_string("Step");
  if (!step || *step != kStepFailed) return;
  auto code = msg.require_int("Code");
  if (code < 0) code = errc::kProtocolError;
  throw Error(code, subsys::kAuth, "peer reported: " + msg.require_string("Message"));
}

wire::RecordAd ClientOffer::to_record() const {
  wire::RecordAd r;
  r.set_string("Methods", join(methods))
      .set_string("Suites", join(suites))
      .set_int("RequireEncryption", require_encryption ? 1 : 0)
      .set_int("RequireIntegrity", require_integrity ? 1 : 0);
  return r;
}

ClientOffer ClientOffer::from_record(const wire::RecordAd& r) {
  ClientOffer o;
  o.methods = split_list(r.require_string("Methods"));
  o.suites = split_list(r.require_string("Suites"));
  o.require_encryption = r.require_int("RequireEncryption") != 0;
  o.require_integrity = r.require_int("RequireIntegrity") != 0;
  return o;
}

std::string client_credential(const SecurityPolicy& local, std::string_view method) {
  const auto& c = local.credentials;
  if (method == kPassword && c.password) return "password:" + c.password->first;
  if (method == kTokenFile && c.token) return "token:" + c.token->first;
  if (method == kGsi && c.gsi) return "gsi:" + c.gsi->first;
  if (method == kClaimToBe) {
    if (c.claim) return "claimtobe:" + *c.claim;
    if (!local.name.empty()) return "claimtobe:" + local.name;
  }
  throw method_error(method, "no local credential for this method");
}

ClientOffer make_offer(const SecurityPolicy& client) {
  ClientOffer o;
  for (const auto& m : client.allowed_methods) {
    try {
      client_credential(client, m);
      o.methods.push_back(m);
    } catch (const Error&) {
    }
  }
  o.suites = client.allowed_suites;
  o.require_encryption = client.require_encryption;
  o.require_integrity = client.require_integrity;
  return o;
}

Negotiated negotiate(const SecurityPolicy& server, const ClientOffer& offer,
                     const crypto::SuiteRegistry& registry) {
  auto fail = [](std::string msg) { throw Error(errc::kNegotiationFailed, subsys::kAuth, std::move(msg)); };
  if (offer.methods.empty()) fail("client offered no authentication methods");
  if (offer.suites.empty()) fail("client offered no suites");
  auto offered = [](const std::vector<std::string>& v, const std::string& x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };

  Negotiated n;
  for (const auto& m : server.allowed_methods)
    if (offered(offer.methods, m)) {
      n.method = m;
      break;
    }
  if (n.method.empty())
    fail("no common authentication method (server " + join(server.allowed_methods) + "; client " +
         join(offer.methods) + ")");

  const bool need_enc = server.require_encryption || offer.require_encryption;
  const bool need_int = server.require_integrity || offer.require_integrity;
  for (const auto& s : server.allowed_suites) {
    if (!offered(offer.suites, s)) continue;
    const auto* d = registry.find_suite(s);
    if (!d) continue;
    if (need_enc && !d->capabilities.encryption) continue;
    if (need_int && !d->capabilities.integrity) continue;
    n.suite = s;
    break;
  }
  if (n.suite.empty())
    fail("no common suite satisfying the protection requirements (server " + join(server.allowed_suites) +
         "; client " + join(offer.suites) + ")");
  n.mode = need_enc ? ProtectionMode::FullEncrypt : ProtectionMode::MacOnly;
  return n;
}

wire::RecordAd AuthOutcome::to_record() const {
  wire::RecordAd r;
  r.set_string("MethodUsed", method_used)
      .set_string("PeerCredential", peer_credential)
      .set_string("CanonicalIdentity", canonical_identity)
      .set_string("Suite", negotiated.suite)
      .set_string("Mode", std::string(to_string(negotiated.mode)))
      .set_string("ServerToldClient", server_told_client);
  return r;
}

Bytes AuthOutcome::serialize() const { return wire::encode_record(to_record()); }

AuthOutcome authenticate(const AuthExchange& ex, const SecurityPolicy& local, Role role,
                         const AuthHooks& hooks) {
  try {
    if (role == Role::Client) return run_client(ex, local, hooks);
    try {
      return run_server(ex, local, hooks);
    } catch (const TransportError&) {
      throw;
    } catch (Error& e) {
      send_failure(ex.channel, e, ex.deadline);
      throw;
    }
  } catch (Error& e) {
    if (e.code() != errc::kAuthorizationDenied)
      e.stack().push(errc::kAuthenticationFailed, subsys::kAuth, "authentication failed");
    throw;
  }
}

}  // namespace seslayer::auth
