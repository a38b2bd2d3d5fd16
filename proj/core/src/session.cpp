#include "seslayer/session.hpp"

#include <sstream>

namespace seslayer::session {

namespace {

const crypto::SuiteRegistry& registry() { return crypto::SuiteRegistry::builtin(); }

Error proto(std::string msg) { return Error(errc::kProtocolError, subsys::kSession, std::move(msg)); }

std::uint8_t mode_byte(ProtectionMode m) { return m == ProtectionMode::FullEncrypt ? 1 : 0; }

ProtectionMode mode_from_byte(std::uint8_t b) {
  if (b == 0) return ProtectionMode::MacOnly;
  if (b == 1) return ProtectionMode::FullEncrypt;
  throw proto("unknown protection mode " + std::to_string(b));
}

std::string join_lines(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "\n" : "") + v[i];
  return out;
}

Bytes frame_mac_input(Direction dir, std::uint64_t seq, ByteView nonce, std::uint8_t flags, ByteView body) {
  Bytes b = to_bytes("frame");
  put_u8(b, static_cast<std::uint8_t>(dir));
  put_u64(b, seq);
  put_u16(b, static_cast<std::uint16_t>(nonce.size()));
  put_bytes(b, nonce);
  put_u8(b, flags);
  put_bytes(b, body);
  return b;
}

Bytes token_mac_input(const Session& carrier, ByteView body) {
  Bytes b = to_bytes("delegate");
  put_u16(b, static_cast<std::uint16_t>(carrier.session_id.size()));
  put_bytes(b, as_bytes(carrier.session_id));
  put_bytes(b, body);
  return b;
}

void put_sid(Bytes& out, std::string_view sid) {
  if (sid.empty() || sid.size() > kMaxSessionIdSize) throw proto("session id length out of range");
  put_u16(out, static_cast<std::uint16_t>(sid.size()));
  put_bytes(out, as_bytes(sid));
}

std::string read_sid(StreamChannel& ch, Deadline d) {
  auto lenb = ch.read_n(2, d);
  auto len = get_u16(lenb.data());
  if (len == 0 || len > kMaxSessionIdSize) throw proto("session id length out of range");
  return to_string(ch.read_n(len, d));
}

}  // namespace

// ---------------------------------------------------------------------------

wire::RecordAd Session::to_record() const {
  std::string levels;
  for (auto l : valid_for_levels) levels += (levels.empty() ? "" : ",") + std::string(auth::to_string(l));
  wire::RecordAd r;
  r.set_string("SessionId", session_id)
      .set_bytes("Key", key.view())
      .set_string("PeerClaim", peer_claim)
      .set_string("Origin", origin.host.empty() ? std::string() : origin.to_string())
      .set_string("AuthMethod", auth_method)
      .set_string("CanonicalIdentity", canonical_identity)
      .set_string("AuthzSnapshot", join_lines(authz_snapshot))
      .set_string("Suite", suite)
      .set_string("Mode", std::string(auth::to_string(mode)))
      .set_int("EstablishedAt", established_at.count())
      .set_int("Lifetime", lifetime.count())
      .set_string("ValidLevels", levels);
  return r;
}

Session Session::from_record(const wire::RecordAd& r) {
  auto bad = [](const std::string& why) { return Error(errc::kDecodeError, subsys::kSession, why); };
  Session s;
  s.session_id = r.require_string("SessionId");
  if (s.session_id.empty() || s.session_id.size() > kMaxSessionIdSize) throw bad("bad session id");
  s.key = crypto::SessionKey(r.require_bytes("Key"));
  s.peer_claim = r.require_string("PeerClaim");
  const auto& origin = r.require_string("Origin");
  if (!origin.empty()) s.origin = Address::parse(origin);
  s.auth_method = r.require_string("AuthMethod");
  s.canonical_identity = r.require_string("CanonicalIdentity");
  std::istringstream snap(r.require_string("AuthzSnapshot"));
  for (std::string line; std::getline(snap, line);) s.authz_snapshot.push_back(line);
  s.suite = r.require_string("Suite");
  if (!registry().find_suite(s.suite)) throw bad("unknown suite '" + s.suite + "'");
  auto mode = auth::parse_mode(r.require_string("Mode"));
  if (!mode) throw bad("unknown mode");
  s.mode = *mode;
  s.established_at = Micros{r.require_int("EstablishedAt")};
  s.lifetime = Micros{r.require_int("Lifetime")};
  if (s.lifetime.count() <= 0) throw bad("non-positive lifetime");
  std::istringstream lv(r.require_string("ValidLevels"));
  for (std::string tok; std::getline(lv, tok, ',');) {
    auto l = auth::parse_level(tok);
    if (!l) throw bad("unknown level '" + tok + "'");
    s.valid_for_levels.insert(*l);
  }
  return s;
}

std::string new_session_id(RandomSource& rng) { return to_hex(rng.bytes(16)); }

SubKeys subkeys(const Session& s) {
  return {crypto::derive_subkey(s.key, "enc"), crypto::derive_subkey(s.key, "mac")};
}

// ---------------------------------------------------------------------------

Bytes encode_resume(const ResumeMessage& m) {
  if (m.header.nonce.size() != kResumeNonceSize) throw proto("resume nonce must be 16 bytes");
  if (m.header.proof.size() != kProofSize) throw proto("resume proof must be 32 bytes");
  Bytes out;
  put_u8(out, static_cast<std::uint8_t>(MessageKind::Resume));
  put_sid(out, m.header.session_id);
  put_bytes(out, m.header.nonce);
  put_u8(out, mode_byte(m.header.mode));
  put_bytes(out, m.header.proof);
  wire::encode_frame_to(m.first, out);
  return out;
}

ResumeMessage decode_resume(ByteView b) {
  std::size_t off = 0;
  auto need = [&](std::size_t n) {
    if (b.size() - off < n) throw proto("truncated resume message");
  };
  need(3);
  if (b[0] != static_cast<std::uint8_t>(MessageKind::Resume)) throw proto("not a resume message");
  auto len = get_u16(b.data() + 1);
  off = 3;
  if (len == 0 || len > kMaxSessionIdSize) throw proto("session id length out of range");
  need(len + kResumeNonceSize + 1 + kProofSize);
  ResumeMessage m;
  m.header.session_id.assign(b.begin() + off, b.begin() + off + len);
  off += len;
  m.header.nonce.assign(b.begin() + off, b.begin() + off + kResumeNonceSize);
  off += kResumeNonceSize;
  m.header.mode = mode_from_byte(b[off++]);
  m.header.proof.assign(b.begin() + off, b.begin() + off + kProofSize);
  off += kProofSize;
  try {
    auto f = wire::decode_frame_prefix(b.subspan(off));
    if (off + f.consumed != b.size()) throw proto("trailing bytes after resume frame");
    m.first = std::move(f.frame);
  } catch (const wire::DecodeError&) {
    throw proto("malformed resume frame");
  } catch (const Error& e) {
    if (e.code() == errc::kProtocolError) throw;
    throw proto("malformed resume frame");
  }
  return m;
}

ResumeMessage read_resume(StreamChannel& ch, Deadline d) {
  ResumeMessage m;
  m.header.session_id = read_sid(ch, d);
  m.header.nonce = ch.read_n(kResumeNonceSize, d);
  std::uint8_t mode = 0;
  ch.read_exact({&mode, 1}, d);
  m.header.mode = mode_from_byte(mode);
  m.header.proof = ch.read_n(kProofSize, d);
  m.first = auth::read_frame(ch, d);
  return m;
}

Bytes resume_proof(const Session& s, ByteView nonce, ProtectionMode mode, const wire::MessageFrame& first) {
  Bytes in = to_bytes("resume");
  put_u16(in, static_cast<std::uint16_t>(s.session_id.size()));
  put_bytes(in, as_bytes(s.session_id));
  put_bytes(in, nonce);
  put_u8(in, mode_byte(mode));
  wire::encode_frame_to(first, in);
  return crypto::hmac_sha256(subkeys(s).mac.view(), in);
}

bool verify_resume(const Session& s, const ResumeMessage& m) {
  if (m.header.session_id != s.session_id || m.header.mode != s.mode) return false;
  if (m.header.nonce.size() != kResumeNonceSize) return false;
  return equal_ct(m.header.proof, resume_proof(s, m.header.nonce, m.header.mode, m.first));
}

Bytes encode_invalidate(std::string_view session_id) {
  Bytes out;
  put_u8(out, static_cast<std::uint8_t>(MessageKind::Invalidate));
  put_sid(out, session_id);
  return out;
}

std::string read_invalidate(StreamChannel& ch, Deadline d) { return read_sid(ch, d); }

// ---------------------------------------------------------------------------

wire::MessageFrame seal(const Session& s, Direction dir, std::uint64_t seq, ByteView conn_nonce,
                        ByteView plaintext, RandomSource& rng) {
  const auto& suite = registry().suite(s.suite);
  auto keys = subkeys(s);
  wire::MessageFrame f;
  f.flags = wire::kFrameMacPresent;
  if (s.mode == ProtectionMode::FullEncrypt) {
    f.flags |= wire::kFrameEncrypted;
    f.body = registry().encrypt(keys.enc.view(), plaintext, suite.cipher_id, rng);
  } else {
    f.body.assign(plaintext.begin(), plaintext.end());
  }
  f.mac = registry().mac(keys.mac.view(), frame_mac_input(dir, seq, conn_nonce, f.flags, f.body),
                         suite.digest_id);
  return f;
}

Bytes open(const Session& s, Direction dir, std::uint64_t seq, ByteView conn_nonce,
           const wire::MessageFrame& f) {
  auto fail = [](std::string why) { return Error(errc::kIntegrityFailure, subsys::kSession, std::move(why)); };
  const auto& suite = registry().suite(s.suite);
  std::uint8_t expected = wire::kFrameMacPresent;
  if (s.mode == ProtectionMode::FullEncrypt) expected |= wire::kFrameEncrypted;
  if (f.flags != expected || !f.mac) throw fail("frame protection does not match the session mode");
  auto keys = subkeys(s);
  if (!registry().verify_mac(keys.mac.view(), frame_mac_input(dir, seq, conn_nonce, f.flags, f.body), *f.mac,
                             suite.digest_id))
    throw fail("frame MAC mismatch");
  if (s.mode == ProtectionMode::FullEncrypt) return registry().decrypt(keys.enc.view(), f.body, suite.cipher_id);
  return f.body;
}

Bytes command_plaintext(CommandLevel level, ByteView payload) {
  Bytes b;
  b.reserve(payload.size() + 1);
  put_u8(b, static_cast<std::uint8_t>(level));
  put_bytes(b, payload);
  return b;
}

std::pair<CommandLevel, Bytes> split_command(ByteView plaintext) {
  if (plaintext.empty() || plaintext[0] > static_cast<std::uint8_t>(CommandLevel::Admin))
    throw proto("missing or invalid command level");
  return {static_cast<CommandLevel>(plaintext[0]), Bytes(plaintext.begin() + 1, plaintext.end())};
}

ResumeMessage make_resume(const Session& s, CommandLevel level, ByteView payload, RandomSource& rng) {
  ResumeMessage m;
  m.header.session_id = s.session_id;
  m.header.nonce = rng.bytes(kResumeNonceSize);
  m.header.mode = s.mode;
  m.first = seal(s, Direction::ClientToServer, 0, m.header.nonce, command_plaintext(level, payload), rng);
  m.header.proof = resume_proof(s, m.header.nonce, m.header.mode, m.first);
  return m;
}

SessionInvalidated::SessionInvalidated(std::string session_id)
    : Error(errc::kSessionInvalidated, subsys::kSession, "server invalidated session " + session_id),
      sid_(std::move(session_id)) {}

SecureStream::SecureStream(StreamChannel& ch, Session s, Bytes conn_nonce, Direction outbound,
                           std::uint64_t next_send_seq, std::uint64_t next_recv_seq, Network& net)
    : ch_(ch),
      session_(std::move(s)),
      nonce_(std::move(conn_nonce)),
      out_(outbound),
      send_seq_(next_send_seq),
      recv_seq_(next_recv_seq),
      net_(net) {}

void SecureStream::send(ByteView payload, Deadline d) {
  if (session_.expired(net_.clock().now()))
    throw Error(errc::kSessionExpired, subsys::kSession, "session " + session_.session_id + " has expired");
  Bytes out;
  put_u8(out, static_cast<std::uint8_t>(MessageKind::Data));
  wire::encode_frame_to(seal(session_, out_, send_seq_++, nonce_, payload, net_.random()), out);
  ch_.write(out, d);
}

Bytes SecureStream::receive(Deadline d) {
  auto kind = auth::read_kind(ch_, d);
  if (kind == static_cast<std::uint8_t>(MessageKind::Invalidate)) throw SessionInvalidated(read_invalidate(ch_, d));
  if (kind != static_cast<std::uint8_t>(MessageKind::Data))
    throw proto("unexpected message kind " + std::to_string(kind) + " on a secured stream");
  auto frame = auth::read_frame(ch_, d);
  auto in = out_ == Direction::ClientToServer ? Direction::ServerToClient : Direction::ClientToServer;
  return open(session_, in, recv_seq_++, nonce_, frame);
}

// ---------------------------------------------------------------------------

Bytes delegate(const Session& carrier, const Session& s, RandomSource& rng, Micros now) {
  if (carrier.expired(now))
    throw Error(errc::kDelegationRejected, subsys::kSession, "carrier session " + carrier.session_id + " has expired");
  if (s.expired(now))
    throw Error(errc::kSessionExpired, subsys::kSession, "session " + s.session_id + " has expired");
  auto keys = subkeys(carrier);
  wire::MessageFrame f;
  f.flags = wire::kFrameEncrypted | wire::kFrameMacPresent;
  f.body = registry().encrypt(keys.enc.view(), wire::encode_record(s.to_record()), crypto::kAes192Ctr, rng);
  f.mac = crypto::hmac_sha256(keys.mac.view(), token_mac_input(carrier, f.body));
  return wire::encode_frame(f);
}

Session unwrap_token(ByteView token, const Session& carrier, Micros now) {
  auto reject = [](std::string why) { return Error(errc::kDelegationRejected, subsys::kSession, std::move(why)); };
  wire::MessageFrame f;
  try {
    auto d = wire::decode_frame_prefix(token);
    if (d.consumed != token.size()) throw reject("trailing bytes after delegation token");
    f = std::move(d.frame);
  } catch (const Error& e) {
    if (e.code() == errc::kDelegationRejected) throw;
    throw reject("malformed delegation token");
  }
  if (f.flags != (wire::kFrameEncrypted | wire::kFrameMacPresent) || !f.mac)
    throw reject("delegation token is not encrypted and authenticated");
  auto keys = subkeys(carrier);
  if (!equal_ct(*f.mac, crypto::hmac_sha256(keys.mac.view(), token_mac_input(carrier, f.body))))
    throw reject("delegation token MAC mismatch");
  Session s;
  try {
    s = Session::from_record(wire::decode_record(
        registry().decrypt(keys.enc.view(), f.body, crypto::kAes192Ctr)));
  } catch (Error& e) {
    e.stack().push(errc::kDelegationRejected, subsys::kSession, "delegation token does not hold a valid session");
    throw;
  }
  if (s.expired(now))
    throw Error(errc::kSessionExpired, subsys::kSession, "delegated session " + s.session_id + " has expired");
  return s;
}

Bytes seal_datagram(const Session& s, CommandLevel level, ByteView payload, RandomSource& rng) {
  return encode_resume(make_resume(s, level, payload, rng));
}

}  // namespace seslayer::session
