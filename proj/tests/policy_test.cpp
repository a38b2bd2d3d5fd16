#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "seslayer/auth.hpp"
#include "seslayer/policy.hpp"
#include "support.hpp"

using namespace seslayer;
using namespace seslayer::auth;
using testing_support::Gen;

namespace {

SecurityPolicy server_with(std::vector<std::string> methods, std::vector<std::string> suites = {"NULL"}) {
  SecurityPolicy p;
  p.allowed_methods = std::move(methods);
  p.allowed_suites = std::move(suites);
  return p;
}

ClientOffer offer(std::vector<std::string> methods, std::vector<std::string> suites = {"NULL"}) {
  ClientOffer o;
  o.methods = std::move(methods);
  o.suites = std::move(suites);
  return o;
}

}  // namespace

TEST(PolicyParse, FullSample) {
  auto p = SecurityPolicy::parse(R"(# sample
NAME collector
METHODS TOKENFILE PASSWORD
SUITES AES192-CTR-HMAC-SHA256 NULL
REQUIRE_ENCRYPTION yes
REQUIRE_INTEGRITY yes
SESSION_LIFETIME 600
MAP password:pool-* pool-service
MAP token:* *
DENY banned READ
ALLOW pool-* DAEMON,READ
ALLOW admin *
PASSWORD schedd s3cret
TOKEN pool tok
CREDENTIAL PASSWORD me mine
AUTH_COST PASSWORD 2 1 3
)");
  EXPECT_EQ(p.name, "collector");
  EXPECT_EQ(p.allowed_methods, (std::vector<std::string>{"TOKENFILE", "PASSWORD"}));
  EXPECT_EQ(p.allowed_suites.front(), "AES192-CTR-HMAC-SHA256");
  EXPECT_TRUE(p.require_encryption);
  EXPECT_EQ(p.session_lifetime, std::chrono::seconds(600));
  ASSERT_EQ(p.map_rules.size(), 2u);
  ASSERT_EQ(p.authz_rules.size(), 3u);
  EXPECT_EQ(p.authz_rules[0].decision, Decision::Deny);
  EXPECT_EQ(p.authz_rules[2].levels.size(), 4u);
  EXPECT_EQ(p.passwords.at("schedd"), "s3cret");
  EXPECT_EQ(p.tokens.at("pool"), "tok");
  ASSERT_TRUE(p.credentials.password);
  EXPECT_EQ(p.credentials.password->first, "me");
  EXPECT_EQ(p.cost("PASSWORD").round_trips, 2);
  EXPECT_EQ(p.cost("PASSWORD").client_cpu, Micros{1000});
  EXPECT_EQ(p.cost("PASSWORD").server_cpu, Micros{3000});
  EXPECT_NO_THROW(p.validate());
}

TEST(PolicyParse, DefaultLifetimeIsAnHour) {
  auto p = SecurityPolicy::parse("METHODS CLAIMTOBE\nSUITES NULL\n");
  EXPECT_EQ(p.session_lifetime, std::chrono::seconds(3600));
}

TEST(PolicyParse, ErrorsNameTheLine) {
  const char* bad[] = {
      "METHODS PASSWORD\nSUITES NULL\nBOGUS x\n",
      "METHODS PASSWORD\nSUITES NULL\nREQUIRE_ENCRYPTION maybe\n",
      "METHODS PASSWORD\nSUITES NULL\nALLOW x NOTALEVEL\n",
      "METHODS PASSWORD\nSUITES NULL\nSESSION_LIFETIME -3\n",
  };
  for (const char* text : bad) {
    try {
      SecurityPolicy::parse(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), errc::kConfigError);
      EXPECT_NE(e.stack().format().find("line 3"), std::string::npos) << e.stack().format();
    }
  }
}

TEST(PolicyParse, ValidateRejectsEmptyAndUnknown) {
  EXPECT_THROW(SecurityPolicy::parse("SUITES NULL\n").validate(), Error);
  EXPECT_THROW(SecurityPolicy::parse("METHODS PASSWORD\n").validate(), Error);
  EXPECT_THROW(SecurityPolicy::parse("METHODS KERBEROS\nSUITES NULL\n").validate(), Error);
}

TEST(PolicyParse, LoadMissingFileIsConfigError) {
  try {
    SecurityPolicy::load("/nonexistent/dir/x.policy");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::kConfigError);
  }
}

TEST(PolicyParse, ShippedConfigsLoad) {
  const std::filesystem::path dir = std::filesystem::path(SESLAYER_GOLDEN_DIR) / ".." / ".." / "config";
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".policy") continue;
    ++n;
    EXPECT_NO_THROW(SecurityPolicy::load(e.path()).validate()) << e.path();
  }
  EXPECT_GE(n, 4);
}

TEST(MapIdentity, Examples) {
  std::vector<MapRule> rules{{"password:pool-*", "pool-service"}, {"password:pool-3", "never"}};
  EXPECT_EQ(map_identity(rules, "password:pool-3"), "pool-service");
  EXPECT_EQ(map_identity(rules, "token:x"), "unmapped");
  EXPECT_EQ(map_identity({{"claim:*", "*"}}, "claim:startd-7"), "startd-7");
  EXPECT_EQ(map_identity({{"claim:*", "user-*"}}, "claim:bob"), "user-bob");
}

TEST(MapIdentity, PatternEngineOracle) {
  // Reference: literal equality, or prefix test when the pattern ends in '*'.
  auto oracle = [](const std::string& p, const std::string& t) {
    if (p.empty() || p.back() != '*') return p == t;
    const auto pre = p.substr(0, p.size() - 1);
    return t.size() >= pre.size() && t.substr(0, pre.size()) == pre;
  };
  Gen g(51);
  for (int i = 0; i < 5000; ++i) {
    std::string t;
    for (auto n = g.range(0, 6); n > 0; --n) t += "ab"[g.index(2)];
    std::string p;
    for (auto n = g.range(0, 4); n > 0; --n) p += "ab"[g.index(2)];
    if (g.coin()) p += '*';
    EXPECT_EQ(pattern_matches(p, t), oracle(p, t)) << p << " vs " << t;
  }
}

TEST(Authorize, Examples) {
  auto p = SecurityPolicy::parse(
      "METHODS PASSWORD\nSUITES NULL\nDENY evil-* *\nALLOW pool-* DAEMON\nALLOW * READ\n");
  EXPECT_EQ(authorize(p, "pool-service", CommandLevel::Daemon), Decision::Allow);
  EXPECT_EQ(authorize(p, "pool-service", CommandLevel::Write), Decision::Deny);
  EXPECT_EQ(authorize(p, "someone", CommandLevel::Read), Decision::Allow);
  EXPECT_EQ(authorize(p, "evil-1", CommandLevel::Read), Decision::Deny);
  EXPECT_EQ(authorize(SecurityPolicy{}, "anyone", CommandLevel::Admin), Decision::Deny);
  EXPECT_EQ(allowed_levels(p, "pool-x"), (std::set<CommandLevel>{CommandLevel::Read, CommandLevel::Daemon}));
}

TEST(AuthorizeProperty, TotalAndFirstMatch) {
  Gen g(52);
  for (int trial = 0; trial < 500; ++trial) {
    SecurityPolicy p;
    const auto n = g.range(0, 6);
    for (int i = 0; i < n; ++i) {
      AuthzRule r;
      r.pattern = g.coin() ? "id-*" : "id-" + std::to_string(g.range(0, 3));
      for (auto l : kAllLevels)
        if (g.coin()) r.levels.insert(l);
      r.decision = g.coin() ? Decision::Allow : Decision::Deny;
      p.authz_rules.push_back(r);
    }
    const auto id = "id-" + std::to_string(g.range(0, 5));
    for (auto l : kAllLevels) {
      Decision expect = Decision::Deny;
      for (const auto& r : p.authz_rules)
        if (r.levels.contains(l) && pattern_matches(r.pattern, id)) {
          expect = r.decision;
          break;
        }
      const auto got = authorize(p, id, l);
      EXPECT_TRUE(got == Decision::Allow || got == Decision::Deny);
      EXPECT_EQ(got, expect);
    }
  }
}

TEST(Negotiate, ServerOrderWins) {
  auto n = negotiate(server_with({"PASSWORD", "CLAIMTOBE"}), offer({"CLAIMTOBE", "PASSWORD"}));
  EXPECT_EQ(n.method, "PASSWORD");
}

TEST(Negotiate, Singleton) {
  EXPECT_EQ(negotiate(server_with({"TOKENFILE"}), offer({"TOKENFILE"})).method, "TOKENFILE");
}

TEST(Negotiate, EmptyIntersectionFails) {
  try {
    negotiate(server_with({"PASSWORD"}), offer({"CLAIMTOBE"}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::kNegotiationFailed);
  }
}

TEST(Negotiate, ProtectionRequirementsPickSuiteAndMode) {
  auto s = server_with({"CLAIMTOBE"}, {"NULL", "AES192-CTR-HMAC-SHA256"});
  auto n = negotiate(s, offer({"CLAIMTOBE"}, {"NULL", "AES192-CTR-HMAC-SHA256"}));
  EXPECT_EQ(n.suite, "NULL");
  EXPECT_EQ(n.mode, ProtectionMode::MacOnly);
  s.require_encryption = true;
  n = negotiate(s, offer({"CLAIMTOBE"}, {"NULL", "AES192-CTR-HMAC-SHA256"}));
  EXPECT_EQ(n.suite, "AES192-CTR-HMAC-SHA256");
  EXPECT_EQ(n.mode, ProtectionMode::FullEncrypt);
  EXPECT_THROW(negotiate(s, offer({"CLAIMTOBE"}, {"NULL"})), Error);
}

TEST(NegotiateProperty, ClientOrderNeverMatters) {
  const std::vector<std::string> methods{"PASSWORD", "TOKENFILE", "CLAIMTOBE", "GSI"};
  const std::vector<std::string> suites{"NULL", "AES192-CTR-HMAC-SHA256"};
  Gen g(53);
  for (int trial = 0; trial < 3000; ++trial) {
    auto pick = [&](const std::vector<std::string>& from) {
      std::vector<std::string> out;
      for (const auto& x : from)
        if (g.coin()) out.push_back(x);
      if (out.empty()) out.push_back(from[g.index(from.size())]);
      g.shuffle(out);
      return out;
    };
    auto server = server_with(pick(methods), pick(suites));
    server.require_encryption = g.coin(0.3);
    auto o = offer(pick(methods), pick(suites));
    o.require_encryption = g.coin(0.3);
    auto swapped = o;
    g.shuffle(swapped.methods);
    g.shuffle(swapped.suites);

    std::optional<Negotiated> a, b;
    try {
      a = negotiate(server, o);
    } catch (const Error&) {
    }
    try {
      b = negotiate(server, swapped);
    } catch (const Error&) {
    }
    ASSERT_EQ(a, b);
    if (a) {
      // the first server method the client offered
      for (const auto& m : server.allowed_methods)
        if (std::find(o.methods.begin(), o.methods.end(), m) != o.methods.end()) {
          EXPECT_EQ(a->method, m);
          break;
        }
    }
  }
}

TEST(Offer, OnlyMethodsWithCredentials) {
  auto p = SecurityPolicy::parse(
      "METHODS GSI PASSWORD TOKENFILE CLAIMTOBE\nSUITES NULL\nCREDENTIAL TOKENFILE pool t\n");
  auto o = make_offer(p);
  EXPECT_EQ(o.methods, (std::vector<std::string>{"TOKENFILE"}));
  EXPECT_EQ(ClientOffer::from_record(o.to_record()).methods, o.methods);
}
