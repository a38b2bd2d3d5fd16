#include <gtest/gtest.h>

#include "seslayer/experiments.hpp"
#include "seslayer/report.hpp"
#include "support.hpp"

using namespace seslayer;
using namespace seslayer::harness;
using testing_support::kClientPolicy;
using testing_support::kLong;
using testing_support::kServerPolicy;
using testing_support::policy;
using testing_support::SimServer;

namespace {

LatencyReport latency(double ms, std::uint64_t seed = 1) {
  LatencyConfig c;
  c.latency_ms = ms;
  c.seed = seed;
  return run_latency_experiment(c);
}

bool server_row(const std::string& op) { return op.find("(server)") != std::string::npos; }

PoolTopology small_pool(int startds, bool no_common_auth = false) {
  PoolTopology t;
  t.startds = startds;
  t.sessions_per_startd = 2;
  t.no_common_auth = no_common_auth;
  return t;
}

}  // namespace

TEST(Latency, RowOrdering) {
  for (double ms : {0.0, 20.0, 150.0}) {
    const auto r = latency(ms);
    ASSERT_EQ(r.rows.size(), 6u);
    const auto t = [&](std::string_view op) { return r.row(op).time; };
    EXPECT_LE(t(kRowResume), t(kRowPing)) << ms;
    EXPECT_LT(t(kRowResume), t(kRowBareClient));
    // with no latency the extra setup round trip costs nothing
    if (ms > 0) {
      EXPECT_LT(t(kRowBareClient), t(kRowSetupClient));
      EXPECT_LT(t(kRowBareServer), t(kRowSetupServer));
    } else {
      EXPECT_LE(t(kRowBareClient), t(kRowSetupClient));
      EXPECT_LE(t(kRowBareServer), t(kRowSetupServer));
    }
    EXPECT_EQ(r.resume_round_trips, 0u);
    EXPECT_EQ(r.resume_messages, 1u);
  }
}

TEST(Latency, ZeroLatencyIsCheap) {
  const auto r = latency(0);
  for (const auto& row : r.rows) EXPECT_LT(row.time, Millis{5}) << row.operation;
}

// time(L) = a + b*L with no residual. On the client b is the round-trip count;
// the server also waits one ping from accept to the first client message.
TEST(Latency, AffineInLatencyWithRoundTripSlope) {
  const double lats[] = {0, 10, 50, 100, 150};
  std::vector<LatencyReport> reps;
  for (double l : lats) reps.push_back(latency(l));
  for (const auto& row0 : reps[0].rows) {
    const auto a = row0.time.count();
    const auto rts = static_cast<std::int64_t>(row0.round_trips);
    const auto b = server_row(row0.operation) ? rts + 1 : rts;
    for (std::size_t i = 1; i < reps.size(); ++i) {
      const auto& row = reps[i].row(row0.operation);
      EXPECT_EQ(row.round_trips, row0.round_trips);
      EXPECT_EQ(row.time.count(), a + b * static_cast<std::int64_t>(lats[i] * 1000)) << row0.operation;
    }
  }
}

TEST(Latency, NegativeLatencyRejected) {
  try {
    latency(-1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::kConfigError);
  }
}

TEST(Latency, CsvIsDeterministic) {
  const auto a = report::latency_csv_table({latency(0), latency(150)}).csv();
  const auto b = report::latency_csv_table({latency(0), latency(150)}).csv();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.substr(0, a.find('\n')), "latency_ms,operation,seconds,round_trips");
}

TEST(Ledger, MessagesMatchCapturedTraffic) {
  sim::SimNet net(3);
  SimServer server(net, policy(kServerPolicy));
  session::SessionManager client(net, policy(kClientPolicy), {"client", 9700});
  net.run("client", [&] {
    server.start(net);
    for (int i = 0; i < 5; ++i) client.call({"server", 9618}, auth::CommandLevel::Read, as_bytes("x"), kLong);
    net.sleep_for(Millis{100});
  });
  EXPECT_EQ(net.ledger().total().messages_sent, net.traffic_count());
  EXPECT_EQ(net.traffic().size(), net.traffic_count());
  std::uint64_t bytes = 0;
  for (const auto& r : net.traffic()) bytes += r.bytes.size();
  EXPECT_EQ(net.ledger().total().bytes_sent, bytes);
}

TEST(Matchmaking, DelegationNeverAddsAuthentications) {
  const auto topo = small_pool(12);
  const auto with = run_matchmaking_scenario(topo, true, 5);
  const auto without = run_matchmaking_scenario(topo, false, 5);
  EXPECT_EQ(with.contacts_ok, 12);
  EXPECT_EQ(without.contacts_ok, 12);
  EXPECT_EQ(with.contacts_delegated, 12);
  EXPECT_EQ(with.schedd_startd_authentications, 0u);
  EXPECT_EQ(without.schedd_startd_authentications, 12u);
  EXPECT_LE(with.collector_authentications, without.collector_authentications);
  EXPECT_LE(with.schedd_authentications, without.schedd_authentications);
  EXPECT_LE(with.startd_authentications, without.startd_authentications);
  EXPECT_EQ(with.startup_establishes, 24u);
}

TEST(Matchmaking, NoCommonMethodNeedsDelegation) {
  const auto topo = small_pool(8, true);
  const auto with = run_matchmaking_scenario(topo, true, 2);
  const auto without = run_matchmaking_scenario(topo, false, 2);
  EXPECT_EQ(with.contacts_ok, 8);
  EXPECT_EQ(with.contacts_failed, 0);
  EXPECT_EQ(without.contacts_ok, 0);
  EXPECT_EQ(without.contacts_failed, 8);
  EXPECT_NE(without.first_error.find("1004"), std::string::npos) << without.first_error;
}

TEST(Matchmaking, SameSeedSameReport) {
  const auto topo = small_pool(6);
  const auto a = report::matchmaking_table({run_matchmaking_scenario(topo, true, 9)}).csv();
  const auto b = report::matchmaking_table({run_matchmaking_scenario(topo, true, 9)}).csv();
  EXPECT_EQ(a, b);
}

TEST(Tree, LeavesShareTheLoad) {
  const auto r = run_collector_tree_experiment(10, 1, 100, 4);
  EXPECT_EQ(r.root_establishes, 10u);
  EXPECT_EQ(r.leaf_total, 400u);
  EXPECT_DOUBLE_EQ(r.leaf_mean, 40.0);
  EXPECT_EQ(r.leaf_min, 40u);
  EXPECT_EQ(r.leaf_max, 40u);
  EXPECT_EQ(r.flat_load, 400u);
  EXPECT_LT(r.max_load, r.flat_load);
}

TEST(Tree, FanoutOneMatchesFlat) {
  const auto tree = run_collector_tree_experiment(1, 1, 30, 4);
  const auto flat = run_collector_tree_experiment(1, 0, 30, 4);
  EXPECT_EQ(tree.leaf_max, flat.root_establishes);
  EXPECT_EQ(flat.root_establishes, 120u);
  EXPECT_EQ(tree.root_establishes, 1u);
}

TEST(Topology, ParsesDirectives) {
  auto t = PoolTopology::parse("# c\nSTARTDS 7\nSCHEDDS 2\nSESSIONS_PER_STARTD 3\nJOBS 5\nLATENCY_MS 2.5\n"
                               "NO_COMMON_AUTH yes\nTREE 4 1\n");
  EXPECT_EQ(t.startds, 7);
  EXPECT_EQ(t.schedds, 2);
  EXPECT_EQ(t.sessions_per_startd, 3);
  EXPECT_EQ(t.job_count(), 5);
  EXPECT_DOUBLE_EQ(t.latency_ms, 2.5);
  EXPECT_TRUE(t.no_common_auth);
  EXPECT_EQ(t.tree_fanout, 4);
}

TEST(Topology, ErrorsAreConfigErrors) {
  const char* bad[] = {"STARTDS -1\n", "STARTDS x\n", "WHAT 3\n", "LATENCY_MS -2\n", "NO_COMMON_AUTH perhaps\n",
                       "SCHEDDS 0\n", "TREE 0 1\n"};
  for (const char* text : bad) {
    try {
      PoolTopology::parse(text).validate();
      ADD_FAILURE() << "accepted: " << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), errc::kConfigError) << text;
    }
  }
  try {
    PoolTopology::load("/nonexistent/pool.topology");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::kConfigError);
  }
}

TEST(Topology, ShippedFilesLoad) {
  const auto dir = std::filesystem::path(SESLAYER_GOLDEN_DIR) / ".." / ".." / "config";
  for (const char* f : {"pool.topology", "no_common_auth.topology", "tree.topology"})
    EXPECT_NO_THROW(PoolTopology::load(dir / f).validate()) << f;
}
