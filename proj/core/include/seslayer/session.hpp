#pragma once

// Sessions and the per-message protection built on them.
//
// RESUME message (big-endian):
//   u8 kind=2 | u16 sid_len | sid | nonce[16] | u8 mode | proof[32] | MessageFrame
// proof = HMAC(mac_key, "resume" | sid | nonce | mode | encoded first frame).
// INVALIDATE message: u8 kind=3 | u16 sid_len | sid.
// DATA message:       u8 kind=4 | MessageFrame.
//
// Frames carry encrypt-then-MAC protection. In FULL_ENCRYPT mode the body is
// AES-192-CTR ciphertext (IV first); in MAC_ONLY mode it is the plaintext.
// Either way the MAC covers direction, sequence number, the connection nonce,
// flags and body, so frames cannot be replayed, reordered or reflected.
//
// Subkeys: enc = derive(key, "enc"), mac = derive(key, "mac").

#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "seslayer/auth.hpp"
#include "seslayer/crypto_suite.hpp"
#include "seslayer/transport.hpp"
#include "seslayer/wire.hpp"

namespace seslayer::session {

using auth::CommandLevel;
using auth::MessageKind;
using auth::ProtectionMode;

struct Session {
  std::string session_id;
  crypto::SessionKey key;
  std::string peer_claim;
  Address origin;
  std::string auth_method;
  std::string canonical_identity;
  std::vector<std::string> authz_snapshot;
  std::string suite;
  ProtectionMode mode = ProtectionMode::MacOnly;
  Micros established_at{0};
  Micros lifetime{0};
  std::set<CommandLevel> valid_for_levels;

  Micros expires_at() const { return established_at + lifetime; }
  bool expired(Micros now) const { return now > expires_at(); }
  bool valid_for(CommandLevel l) const { return valid_for_levels.contains(l); }

  wire::RecordAd to_record() const;
  // Throws Error(kDecodeError) if a field is missing or malformed.
  static Session from_record(const wire::RecordAd& r);

  friend bool operator==(const Session&, const Session&) = default;
};

// Session ids: 16 random bytes in hex.
std::string new_session_id(RandomSource& rng);

struct SubKeys {
  crypto::SessionKey enc;
  crypto::SessionKey mac;
};
SubKeys subkeys(const Session& s);

// ---------------------------------------------------------------------------
// Resume

inline constexpr std::size_t kResumeNonceSize = 16;
inline constexpr std::size_t kProofSize = 32;
inline constexpr std::size_t kMaxSessionIdSize = 256;

struct ResumeHeader {
  std::string session_id;
  Bytes nonce;
  ProtectionMode mode = ProtectionMode::MacOnly;
  Bytes proof;
  friend bool operator==(const ResumeHeader&, const ResumeHeader&) = default;
};

struct ResumeMessage {
  ResumeHeader header;
  wire::MessageFrame first;
};

Bytes encode_resume(const ResumeMessage& m);
// Decodes a complete RESUME message (kind byte included). Throws Error(kProtocolError).
ResumeMessage decode_resume(ByteView bytes);
// Reads the rest of a RESUME message after its kind byte.
ResumeMessage read_resume(StreamChannel& ch, Deadline d);

Bytes resume_proof(const Session& s, ByteView nonce, ProtectionMode mode, const wire::MessageFrame& first);
bool verify_resume(const Session& s, const ResumeMessage& m);

Bytes encode_invalidate(std::string_view session_id);
// Decodes the body after the kind byte.
std::string read_invalidate(StreamChannel& ch, Deadline d);

// ---------------------------------------------------------------------------
// Frame protection

enum class Direction : std::uint8_t { ClientToServer = 'C', ServerToClient = 'S' };

wire::MessageFrame seal(const Session& s, Direction dir, std::uint64_t seq, ByteView conn_nonce,
                        ByteView plaintext, RandomSource& rng);
// Throws Error(kIntegrityFailure) if the frame does not verify.
Bytes open(const Session& s, Direction dir, std::uint64_t seq, ByteView conn_nonce,
           const wire::MessageFrame& frame);

// First-frame plaintext: u8 command level then the payload.
Bytes command_plaintext(CommandLevel level, ByteView payload);
std::pair<CommandLevel, Bytes> split_command(ByteView plaintext);

// Builds a RESUME message carrying `payload` as its first frame.
ResumeMessage make_resume(const Session& s, CommandLevel level, ByteView payload, RandomSource& rng);

// One side of a protected connection after a resume.
class SecureStream {
 public:
  // `next_recv_seq` is 1 on the server (the resume frame used 0).
  SecureStream(StreamChannel& ch, Session s, Bytes conn_nonce, Direction outbound, std::uint64_t next_send_seq,
               std::uint64_t next_recv_seq, Network& net);

  // Throws Error(kSessionExpired) without writing if the session has expired.
  void send(ByteView payload, Deadline d);
  // Throws Error(kSessionInvalidated) if the peer sent INVALIDATE.
  Bytes receive(Deadline d);

  const Session& session() const { return session_; }
  StreamChannel& channel() { return ch_; }

 private:
  StreamChannel& ch_;
  Session session_;
  Bytes nonce_;
  Direction out_;
  std::uint64_t send_seq_;
  std::uint64_t recv_seq_;
  Network& net_;
};

// Thrown by client code when the server reported an unknown session.
class SessionInvalidated : public Error {
 public:
  explicit SessionInvalidated(std::string session_id);
  const std::string& session_id() const { return sid_; }

 private:
  std::string sid_;
};

// ---------------------------------------------------------------------------
// Delegation

// Serializes `s` (key included) and wraps it under the carrier session's keys.
// The token is always encrypted, whatever mode the carrier negotiated.
// Throws Error(kDelegationRejected) if the carrier is expired at `now`.
Bytes delegate(const Session& carrier, const Session& s, RandomSource& rng, Micros now);
// Verifies and unwraps a token. Throws Error(kDelegationRejected) on a MAC or
// format failure and Error(kSessionExpired) if the carried session expired.
Session unwrap_token(ByteView token, const Session& carrier, Micros now);

// ---------------------------------------------------------------------------
// Secure datagrams: a RESUME message whose first frame is the payload.

Bytes seal_datagram(const Session& s, CommandLevel level, ByteView payload, RandomSource& rng);

}  // namespace seslayer::session
