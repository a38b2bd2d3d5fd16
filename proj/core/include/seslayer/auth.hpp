#pragma once

// Negotiation (the server's preference order wins) and mutual authentication
// over a stream channel.
//
// Every method runs the same message skeleton: the client opens with its
// nonce and identifying fields, round_trips-1 padding exchanges follow, and
// the server's last message carries its nonce, the mapped identity and a
// proof; the client answers with a one-way final message carrying its proof.
// Keyed methods (PASSWORD, TOKENFILE, GSI) prove possession of a shared key
// K with HMAC over both nonces, the role and the caller's transcript binding;
// K itself never crosses the wire. CLAIMTOBE sends no proofs.

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "seslayer/crypto_suite.hpp"
#include "seslayer/policy.hpp"
#include "seslayer/transport.hpp"
#include "seslayer/wire.hpp"

namespace seslayer::auth {

// ---------------------------------------------------------------------------
// Message plumbing shared with the session layer.

enum class MessageKind : std::uint8_t { Establish = 1, Resume = 2, Invalidate = 3, Data = 4 };

inline constexpr std::uint32_t kMaxStreamFrame = 16u * 1024u * 1024u;

std::uint8_t read_kind(StreamChannel& ch, Deadline d);
// Reads one MessageFrame (header, body, optional mac).
wire::MessageFrame read_frame(StreamChannel& ch, Deadline d);

// Writes kind + plain frame holding the encoded record. Returns the bytes sent.
Bytes send_record(StreamChannel& ch, MessageKind kind, const wire::RecordAd& rec, Deadline d);
// Reads a plain frame of the expected kind. `raw`, if given, receives the
// exact bytes read (kind byte included).
wire::RecordAd receive_record(StreamChannel& ch, MessageKind kind, Deadline d, Bytes* raw = nullptr);

// "Step" value used for a failure report from the peer.
inline constexpr std::string_view kStepFailed = "failed";
void send_failure(StreamChannel& ch, const Error& e, Deadline d) noexcept;
// Throws an Error reconstructed from a failure report if `msg` is one.
void throw_if_failure(const wire::RecordAd& msg);

// ---------------------------------------------------------------------------
// Negotiation

struct ClientOffer {
  std::vector<std::string> methods;
  std::vector<std::string> suites;
  bool require_encryption = false;
  bool require_integrity = true;

  wire::RecordAd to_record() const;
  static ClientOffer from_record(const wire::RecordAd& r);
};

// Methods the policy lists and has credentials for, in policy order.
ClientOffer make_offer(const SecurityPolicy& client);

struct Negotiated {
  std::string method;
  std::string suite;
  ProtectionMode mode = ProtectionMode::MacOnly;
  friend bool operator==(const Negotiated&, const Negotiated&) = default;
};

// Throws Error(kNegotiationFailed) when nothing acceptable is shared.
Negotiated negotiate(const SecurityPolicy& server, const ClientOffer& offer,
                     const crypto::SuiteRegistry& registry = crypto::SuiteRegistry::builtin());

// ---------------------------------------------------------------------------
// Authentication

struct AuthOutcome {
  std::string method_used;
  std::string peer_credential;
  std::string canonical_identity;
  Negotiated negotiated;
  std::string server_told_client;

  wire::RecordAd to_record() const;
  Bytes serialize() const;
  friend bool operator==(const AuthOutcome&, const AuthOutcome&) = default;
};

enum class Role { Client, Server };

// Material handed to the hooks once the proofs are in place.
struct KeyContext {
  std::string method;
  Bytes method_key;  // empty for CLAIMTOBE
  Bytes client_nonce;
  Bytes server_nonce;
  const AuthOutcome* outcome = nullptr;
};

// Lets the caller piggyback data on the last two messages. Exceptions of type
// Error thrown by a server hook are reported to the client before rethrowing.
struct AuthHooks {
  std::function<void(wire::RecordAd&, const KeyContext&)> server_final_out;
  std::function<void(const wire::RecordAd&, const KeyContext&)> client_final_in;
  std::function<void(wire::RecordAd&, const KeyContext&)> client_final_out;
  std::function<void(const wire::RecordAd&, const KeyContext&)> server_final_in;
};

struct AuthExchange {
  Network& net;
  StreamChannel& channel;
  Deadline deadline;
  Bytes binding;  // transcript of the enclosing protocol; empty for bare auth
  Negotiated negotiated;
};

inline constexpr std::size_t kNonceSize = 16;

// Throws Error whose stack tops with 1003 on a failed proof or credential,
// with any transport frame beneath it.
AuthOutcome authenticate(const AuthExchange& ex, const SecurityPolicy& local, Role role,
                         const AuthHooks& hooks = {});

// Credential string a client presents for `method` ("password:<user>", ...).
// Throws Error(kAuthenticationFailed) when the policy holds none.
std::string client_credential(const SecurityPolicy& local, std::string_view method);

}  // namespace seslayer::auth
