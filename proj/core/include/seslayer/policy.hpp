#pragma once

// Security policy: which methods and suites a daemon accepts (in preference
// order), protection requirements, identity mapping, authorization rules and
// local credentials. Loaded from a line-oriented text file:
//
//   NAME <daemon name>
//   METHODS <m1> [<m2> ...]            preference order
//   SUITES <s1> [<s2> ...]             preference order
//   REQUIRE_ENCRYPTION yes|no
//   REQUIRE_INTEGRITY yes|no
//   SESSION_LIFETIME <seconds>
//   MAP <credential-pattern> <identity>   "*" in identity takes the matched tail
//   ALLOW <identity-pattern> <LEVEL>[,<LEVEL>...]|*
//   DENY <identity-pattern> <LEVEL>[,<LEVEL>...]|*
//   PASSWORD <user> <secret>           accepted password (server side)
//   TOKEN <name> <secret>              accepted token (server side)
//   GSI_CA <secret>                    trust anchor for the GSI stub
//   CREDENTIAL PASSWORD <user> <secret>
//   CREDENTIAL TOKENFILE <name> <secret>
//   CREDENTIAL CLAIMTOBE <name>
//   CREDENTIAL GSI <subject> <certificate-hex>
//   AUTH_COST <method> <round_trips> <client_cpu_ms> <server_cpu_ms>
//
// '#' starts a comment. Patterns are literals with an optional trailing '*'.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "seslayer/clock.hpp"
#include "seslayer/errstack.hpp"

namespace seslayer::auth {

inline constexpr std::string_view kPassword = "PASSWORD";
inline constexpr std::string_view kTokenFile = "TOKENFILE";
inline constexpr std::string_view kClaimToBe = "CLAIMTOBE";
// Stand-in for an expensive PKI handshake: a keyed proof over a CA-issued
// certificate value, with a configurable round-trip and CPU cost.
inline constexpr std::string_view kGsi = "GSI";

enum class CommandLevel { Read, Write, Daemon, Admin };
inline constexpr CommandLevel kAllLevels[] = {CommandLevel::Read, CommandLevel::Write,
                                              CommandLevel::Daemon, CommandLevel::Admin};

std::string_view to_string(CommandLevel level);
std::optional<CommandLevel> parse_level(std::string_view text);

enum class Decision { Allow, Deny };
std::string_view to_string(Decision d);

enum class ProtectionMode { MacOnly, FullEncrypt };
std::string_view to_string(ProtectionMode m);
std::optional<ProtectionMode> parse_mode(std::string_view text);

struct MethodCost {
  int round_trips = 1;
  Micros client_cpu{0};
  Micros server_cpu{0};
  friend bool operator==(const MethodCost&, const MethodCost&) = default;
};

// Built-in cost of each method before AUTH_COST overrides.
MethodCost default_cost(std::string_view method);
bool is_known_method(std::string_view method);

struct MapRule {
  std::string pattern;
  std::string identity;
};

struct AuthzRule {
  std::string pattern;
  std::set<CommandLevel> levels;
  Decision decision = Decision::Deny;
};

// Literal match, or prefix match when `pattern` ends in '*'. On a match the
// text covered by the '*' is stored in `tail`.
bool pattern_matches(std::string_view pattern, std::string_view text, std::string* tail = nullptr);

inline constexpr std::string_view kUnmapped = "unmapped";

// First matching rule wins; the implicit final rule maps to "unmapped".
std::string map_identity(const std::vector<MapRule>& rules, std::string_view credential);

// Credentials this daemon presents when acting as a client.
struct Credentials {
  std::optional<std::pair<std::string, std::string>> password;  // user, secret
  std::optional<std::pair<std::string, std::string>> token;     // name, secret
  std::optional<std::string> claim;
  std::optional<std::pair<std::string, std::string>> gsi;  // subject, certificate hex
};

// Certificate value the GSI stub accepts for `subject` under `ca_secret`.
std::string issue_gsi_certificate(std::string_view ca_secret, std::string_view subject);

struct SecurityPolicy {
  std::string name;
  std::vector<std::string> allowed_methods;
  std::vector<std::string> allowed_suites;
  bool require_encryption = false;
  bool require_integrity = true;
  std::vector<MapRule> map_rules;
  std::vector<AuthzRule> authz_rules;
  Micros session_lifetime = std::chrono::seconds(3600);

  std::map<std::string, std::string> passwords;
  std::map<std::string, std::string> tokens;
  std::string gsi_ca;
  Credentials credentials;
  std::map<std::string, MethodCost> costs;

  MethodCost cost(std::string_view method) const;

  // Throws Error(kConfigError) when a list is empty or names something unknown.
  void validate() const;

  // Renders the authorization rules, one per line, as stored in sessions.
  std::vector<std::string> authz_snapshot() const;

  // Throws Error(kConfigError) with the offending line number.
  static SecurityPolicy parse(std::string_view text);
  static SecurityPolicy load(const std::filesystem::path& path);
};

// First match over the rules, then deny.
Decision authorize(const SecurityPolicy& policy, std::string_view identity, CommandLevel level);
std::set<CommandLevel> allowed_levels(const SecurityPolicy& policy, std::string_view identity);

}  // namespace seslayer::auth
