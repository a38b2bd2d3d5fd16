#include "seslayer/policy.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "seslayer/bytes.hpp"
#include "seslayer/crypto_suite.hpp"

namespace seslayer::auth {

std::string_view to_string(CommandLevel level) {
  switch (level) {
    case CommandLevel::Read: return "READ";
    case CommandLevel::Write: return "WRITE";
    case CommandLevel::Daemon: return "DAEMON";
    case CommandLevel::Admin: return "ADMIN";
  }
  return "?";
}

std::optional<CommandLevel> parse_level(std::string_view text) {
  for (auto l : kAllLevels)
    if (to_string(l) == text) return l;
  return std::nullopt;
}

std::string_view to_string(Decision d) { return d == Decision::Allow ? "ALLOW" : "DENY"; }

std::string_view to_string(ProtectionMode m) {
  return m == ProtectionMode::FullEncrypt ? "FULL_ENCRYPT" : "MAC_ONLY";
}

std::optional<ProtectionMode> parse_mode(std::string_view text) {
  if (text == "FULL_ENCRYPT") return ProtectionMode::FullEncrypt;
  if (text == "MAC_ONLY") return ProtectionMode::MacOnly;
  return std::nullopt;
}

MethodCost default_cost(std::string_view method) {
  if (method == kGsi) return {3, Micros{1000}, Micros{2000}};
  return {1, Micros{0}, Micros{0}};
}

bool is_known_method(std::string_view m) {
  return m == kPassword || m == kTokenFile || m == kClaimToBe || m == kGsi;
}

bool pattern_matches(std::string_view pattern, std::string_view text, std::string* tail) {
  if (!pattern.empty() && pattern.back() == '*') {
    auto prefix = pattern.substr(0, pattern.size() - 1);
    if (!text.starts_with(prefix)) return false;
    if (tail) *tail = std::string(text.substr(prefix.size()));
    return true;
  }
  if (pattern != text) return false;
  if (tail) tail->clear();
  return true;
}

std::string map_identity(const std::vector<MapRule>& rules, std::string_view credential) {
  for (const auto& r : rules) {
    std::string tail;
    if (!pattern_matches(r.pattern, credential, &tail)) continue;
    std::string out = r.identity;
    if (auto star = out.find('*'); star != std::string::npos) out.replace(star, 1, tail);
    return out;
  }
  return std::string(kUnmapped);
}

std::string issue_gsi_certificate(std::string_view ca_secret, std::string_view subject) {
  return to_hex(crypto::hmac_sha256(as_bytes(ca_secret), as_bytes(subject)));
}

MethodCost SecurityPolicy::cost(std::string_view method) const {
  auto it = costs.find(std::string(method));
  return it == costs.end() ? default_cost(method) : it->second;
}

void SecurityPolicy::validate() const {
  auto fail = [](std::string msg) { throw Error(errc::kConfigError, subsys::kConfig, std::move(msg)); };
  if (allowed_methods.empty()) fail("policy lists no authentication methods");
  if (allowed_suites.empty()) fail("policy lists no suites");
  for (const auto& m : allowed_methods)
    if (!is_known_method(m)) fail("unknown authentication method '" + m + "'");
  for (const auto& s : allowed_suites)
    if (!crypto::SuiteRegistry::builtin().find_suite(s)) fail("unknown suite '" + s + "'");
  if (session_lifetime.count() <= 0) fail("session lifetime must be positive");
  for (const auto& [m, c] : costs)
    if (c.round_trips < 1 || (m == kClaimToBe && c.round_trips != 1))
      fail("invalid round-trip count for " + m);
}

std::vector<std::string> SecurityPolicy::authz_snapshot() const {
  std::vector<std::string> out;
  for (const auto& r : authz_rules) {
    std::string line = std::string(to_string(r.decision)) + " " + r.pattern + " ";
    bool first = true;
    for (auto l : r.levels) {
      if (!first) line += ",";
      line += to_string(l);
      first = false;
    }
    out.push_back(std::move(line));
  }
  out.push_back("DENY * *");
  return out;
}

namespace {

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "yes" || v == "true" || v == "1") return out = true, true;
  if (v == "no" || v == "false" || v == "0") return out = false, true;
  return false;
}

bool parse_int(const std::string& v, std::int64_t& out) {
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  return ec == std::errc{} && p == v.data() + v.size();
}

}  // namespace

SecurityPolicy SecurityPolicy::parse(std::string_view text) {
  SecurityPolicy p;
  bool saw_methods = false, saw_suites = false;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    auto w = split_words(raw);
    if (w.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw Error(errc::kConfigError, subsys::kConfig,
                  "policy line " + std::to_string(lineno) + ": " + why);
    };
    auto need = [&](std::size_t n) {
      if (w.size() != n) fail(w[0] + " expects " + std::to_string(n - 1) + " argument(s)");
    };
    const std::string& d = w[0];
    if (d == "NAME") {
      need(2);
      p.name = w[1];
    } else if (d == "METHODS") {
      if (w.size() < 2) fail("METHODS needs at least one method");
      p.allowed_methods.assign(w.begin() + 1, w.end());
      saw_methods = true;
    } else if (d == "SUITES") {
      if (w.size() < 2) fail("SUITES needs at least one suite");
      p.allowed_suites.assign(w.begin() + 1, w.end());
      saw_suites = true;
    } else if (d == "REQUIRE_ENCRYPTION" || d == "REQUIRE_INTEGRITY") {
      need(2);
      bool v = false;
      if (!parse_bool(w[1], v)) fail("expected yes or no, got '" + w[1] + "'");
      (d == "REQUIRE_ENCRYPTION" ? p.require_encryption : p.require_integrity) = v;
    } else if (d == "SESSION_LIFETIME") {
      need(2);
      std::int64_t s = 0;
      if (!parse_int(w[1], s) || s <= 0) fail("bad lifetime '" + w[1] + "'");
      p.session_lifetime = std::chrono::seconds(s);
    } else if (d == "MAP") {
      need(3);
      p.map_rules.push_back({w[1], w[2]});
    } else if (d == "ALLOW" || d == "DENY") {
      need(3);
      AuthzRule r{w[1], {}, d == "ALLOW" ? Decision::Allow : Decision::Deny};
      if (w[2] == "*") {
        r.levels.insert(std::begin(kAllLevels), std::end(kAllLevels));
      } else {
        std::istringstream ls(w[2]);
        std::string tok;
        while (std::getline(ls, tok, ',')) {
          auto l = parse_level(tok);
          if (!l) fail("unknown command level '" + tok + "'");
          r.levels.insert(*l);
        }
      }
      p.authz_rules.push_back(std::move(r));
    } else if (d == "PASSWORD") {
      need(3);
      p.passwords[w[1]] = w[2];
    } else if (d == "TOKEN") {
      need(3);
      p.tokens[w[1]] = w[2];
    } else if (d == "GSI_CA") {
      need(2);
      p.gsi_ca = w[1];
    } else if (d == "CREDENTIAL") {
      if (w.size() < 3) fail("CREDENTIAL needs a method and arguments");
      const auto& m = w[1];
      if (m == kPassword) {
        need(4);
        p.credentials.password = {{w[2], w[3]}};
      } else if (m == kTokenFile) {
        need(4);
        p.credentials.token = {{w[2], w[3]}};
      } else if (m == kClaimToBe) {
        need(3);
        p.credentials.claim = w[2];
      } else if (m == kGsi) {
        need(4);
        p.credentials.gsi = {{w[2], w[3]}};
      } else {
        fail("unknown credential method '" + m + "'");
      }
    } else if (d == "AUTH_COST") {
      need(5);
      std::int64_t rt = 0, c = 0, s = 0;
      if (!is_known_method(w[1])) fail("unknown method '" + w[1] + "'");
      if (!parse_int(w[2], rt) || !parse_int(w[3], c) || !parse_int(w[4], s) || rt < 1 || c < 0 || s < 0)
        fail("bad AUTH_COST values");
      p.costs[w[1]] = {static_cast<int>(rt), Micros{c * 1000}, Micros{s * 1000}};
    } else {
      fail("unknown directive '" + d + "'");
    }
  }
  if (!saw_methods) throw Error(errc::kConfigError, subsys::kConfig, "policy has no METHODS line");
  if (!saw_suites) throw Error(errc::kConfigError, subsys::kConfig, "policy has no SUITES line");
  p.validate();
  return p;
}

SecurityPolicy SecurityPolicy::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f)
    throw Error(errc::kConfigError, subsys::kConfig, "cannot read policy file '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse(ss.str());
  } catch (Error& e) {
    e.stack().push(errc::kConfigError, subsys::kConfig, "invalid policy file '" + path.string() + "'");
    throw;
  }
}

Decision authorize(const SecurityPolicy& policy, std::string_view identity, CommandLevel level) {
  for (const auto& r : policy.authz_rules)
    if (r.levels.contains(level) && pattern_matches(r.pattern, identity)) return r.decision;
  return Decision::Deny;
}

std::set<CommandLevel> allowed_levels(const SecurityPolicy& policy, std::string_view identity) {
  std::set<CommandLevel> out;
  for (auto l : kAllLevels)
    if (authorize(policy, identity, l) == Decision::Allow) out.insert(l);
  return out;
}

}  // namespace seslayer::auth
