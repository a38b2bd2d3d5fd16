// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "seslayer/errstack.hpp"
#include "seslayer/experiments.hpp"
#include "seslayer/fragment.hpp"
#include "seslayer/report.hpp"
#include "seslayer/secman.hpp"
#include "seslayer/simnet.hpp"
#include "seslayer/wire.hpp"
#include "support.hpp"

using namespace seslayer;
using namespace seslayer::session;
using testing_support::Gen;
using testing_support::kClientPolicy;
using testing_support::kServerPolicy;
using testing_support::policy;
using testing_support::SimServer;

namespace {

using WallClock = std::chrono::steady_clock;

// Pinned limits.
constexpr Micros kOneWayLatency{150'000};
constexpr double kTablePingMs = 150.0;
constexpr Micros kZeroLatencyBound{5'000};
constexpr int kPoolStartds = 50;
constexpr int kDatagramTrials = 1000;
constexpr std::size_t kDatagramSize = 70000;
constexpr std::size_t kFragmentPayload = 8000;
constexpr double kDuplicateProbability = 0.10;
constexpr Micros kArrivalJitter{20'000};
constexpr int kMutations = 10000;
constexpr int kCodecTrials = 10000;
constexpr int kTreeFanout = 70;
constexpr int kTreeStartds = 700;
constexpr int kTreeSessions = 4;

const Address kServerAddr{"server", 9618};
const Address kClientAddr{"client", 9700};
const Deadline kLong = Deadline::seconds(600);

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail = what;
    pass = false;
  }
};

int failures = 0;

void criterion(int n, const char* name, std::chrono::seconds limit, const std::function<Outcome()>& body) {
  const auto t0 = WallClock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const auto elapsed = std::chrono::duration<double>(WallClock::now() - t0).count();
  if (o.pass && elapsed >= static_cast<double>(limit.count())) {
    o.pass = false;
    o.detail = "over the runtime limit";
  }
  if (!o.pass) ++failures;
  std::printf("%s %2d %s (%.2fs%s%s)\n", o.pass ? "PASS" : "FAIL", n, name, elapsed, o.detail.empty() ? "" : ": ",
              o.detail.c_str());
  std::fflush(stdout);
}

std::string num(std::uint64_t v) { return std::to_string(v); }

// ---------------------------------------------------------------------------

Outcome zero_rtt_resume() {
  Outcome o;
  sim::SimNet net(1);
  net.set_default_link({kOneWayLatency});
  SimServer server(net, policy(kServerPolicy));
  SessionManager client(net, policy(kClientPolicy), kClientAddr);
  LedgerCounters est, res;
  Bytes reply;
  net.run("client", [&] {
    server.start(net);
    client.establish(kServerAddr, CommandLevel::Read, kLong);
    est = net.ledger().get("client", "establish");
    reply = client.call(kServerAddr, CommandLevel::Read, as_bytes("payload"), kLong).reply;
    res = net.ledger().get("client", "resume");
  });
  o.check(est.round_trips >= 2, "establish round trips " + num(est.round_trips));
  o.check(res.round_trips == 0, "resume round trips " + num(res.round_trips));
  o.check(res.messages_sent == 1, "resume messages " + num(res.messages_sent));
  o.check(reply == to_bytes("payload"), "reply mismatch");
  if (o.pass)
    o.detail = "establish " + num(est.round_trips) + " RTs, resume " + num(res.round_trips) + " RTs / " +
               num(res.messages_sent) + " msg";
  return o;
}

Outcome latency_table_shape() {
  Outcome o;
  harness::LatencyConfig cfg;
  cfg.latency_ms = kTablePingMs;
  const auto r = harness::run_latency_experiment(cfg);
  const auto t = [&](std::string_view op) { return r.row(op).time; };
  using namespace harness;
  o.check(t(kRowPing) < t(kRowBareClient), "ping !< bare(client)");
  o.check(t(kRowBareClient) < t(kRowBareServer), "bare(client) !< bare(server)");
  o.check(t(kRowBareServer) <= t(kRowSetupClient), "bare(server) !<= setup(client)");
  o.check(t(kRowSetupClient) < t(kRowSetupServer), "setup(client) !< setup(server)");
  cfg.latency_ms = 0;
  const auto z = harness::run_latency_experiment(cfg);
  for (const auto& row : z.rows) o.check(row.time < kZeroLatencyBound, row.operation + " at zero latency");
  return o;
}

Outcome delegation_counts() {
  Outcome o;
  harness::PoolTopology topo;
  topo.startds = kPoolStartds;
  const auto on = harness::run_matchmaking_scenario(topo, true);
  const auto off = harness::run_matchmaking_scenario(topo, false);
  o.check(on.schedd_startd_authentications == 0, "delegation on: " + num(on.schedd_startd_authentications));
  o.check(off.schedd_startd_authentications == kPoolStartds,
          "delegation off: " + num(off.schedd_startd_authentications));
  topo.no_common_auth = true;
  const auto nc_on = harness::run_matchmaking_scenario(topo, true);
  const auto nc_off = harness::run_matchmaking_scenario(topo, false);
  o.check(nc_on.contacts_ok == kPoolStartds, "no common method, on: " + std::to_string(nc_on.contacts_ok));
  o.check(nc_off.contacts_ok == 0, "no common method, off: " + std::to_string(nc_off.contacts_ok));
  if (o.pass)
    o.detail = "auths " + num(on.schedd_startd_authentications) + "/" + num(off.schedd_startd_authentications) +
               ", no-common contacts " + std::to_string(nc_on.contacts_ok) + "/" + std::to_string(nc_off.contacts_ok);
  return o;
}

Outcome oversized_datagram() {
  Outcome o;
  sim::SimNet net(4);
  net.set_capture(false);
  net.set_default_link({Millis{1}});
  sim::LinkParams lossy{Millis{1}, 0.0, kDuplicateProbability, kArrivalJitter};
  net.set_link("client", "server", lossy);

  SimServer server(net, policy(kServerPolicy));
  std::vector<Bytes> delivered;
  server.mgr.set_handler([&](CommandContext& ctx) { delivered.push_back(ctx.payload); });
  SessionManager client(net, policy(kClientPolicy), kClientAddr);

  std::uint64_t fragments_seen = 0, duplicates = 0, reordered = 0;
  std::vector<Bytes> sent;
  net.run("client", [&] {
    server.listener = net.listen(server.mgr.address());
    server.dgram = net.bind_datagram(server.mgr.address());
    net.spawn("server", [&] { server.mgr.run_listener(*server.listener); });
    // Receive loop that also watches arrival order.
    net.spawn("server", [&] {
      std::map<std::uint64_t, std::set<std::uint16_t>> seen;
      std::map<std::uint64_t, int> last;
      std::set<std::uint64_t> out_of_order;
      for (;;) {
        auto d = server.dgram->receive(Deadline::ms(200));
        if (!d) continue;
        const auto h = decode_fragment(d->data).header;
        ++fragments_seen;
        if (!seen[h.datagram_id].insert(h.index).second) ++duplicates;
        auto& l = last.try_emplace(h.datagram_id, -1).first->second;
        if (h.index < l && out_of_order.insert(h.datagram_id).second) ++reordered;
        l = std::max(l, static_cast<int>(h.index));
        server.mgr.on_datagram(*d);
      }
    });
    auto sock = net.bind_datagram(kClientAddr);
    PacingPolicy pacing;
    pacing.max_fragment_payload = kFragmentPayload;
    Gen g(4);
    for (int i = 0; i < kDatagramTrials; ++i) {
      sent.push_back(g.bytes(kDatagramSize));
      client.send_secure_udp(*sock, kServerAddr, CommandLevel::Read, sent.back(), pacing, kLong);
      net.sleep_for(2 * kArrivalJitter);
    }
    net.sleep_for(Millis{500});
  });
  o.check(delivered.size() == sent.size(), "delivered " + num(delivered.size()) + " of " + num(sent.size()));
  std::size_t corrupt = 0;
  for (std::size_t i = 0; i < std::min(sent.size(), delivered.size()); ++i)
    if (delivered[i] != sent[i]) ++corrupt;
  o.check(corrupt == 0, num(corrupt) + " corrupted");
  o.check(duplicates > 0, "no duplicates were injected");
  o.check(reordered > 0, "no datagram arrived out of order");
  if (o.pass)
    o.detail = num(delivered.size()) + " intact; " + num(reordered) + " reordered, " + num(duplicates) +
               " duplicate fragments of " + num(fragments_seen);
  return o;
}

Outcome tamper_rejection() {
  Outcome o;
  sim::SimNet net(5);
  net.set_capture(false);
  SimServer server(net, policy(kServerPolicy));
  std::uint64_t accepted = 0;
  server.mgr.set_handler([&](CommandContext&) { ++accepted; });
  SessionManager client(net, policy(kClientPolicy), kClientAddr);
  std::uint64_t token_accepts = 0, resumes = 0, tokens = 0, datagrams = 0;
  bool controls_ok = false;
  net.run("client", [&] {
    server.start(net);
    const auto s = client.establish(kServerAddr, CommandLevel::Read, kLong);
    net.sleep_for(Millis{50});
    Session inner = s;
    inner.session_id = new_session_id(net.random());
    inner.key = crypto::generate_session_key(net.random());
    // Controls: the same messages unmutated are accepted.
    {
      auto ch = net.connect(kServerAddr, kLong);
      ch->write(encode_resume(make_resume(s, CommandLevel::Read, as_bytes("cmd"), net.random())), kLong);
      ch->close();
      Fragment f;
      f.payload = seal_datagram(s, CommandLevel::Read, as_bytes("dgram"), net.random());
      f.header.payload_len = static_cast<std::uint16_t>(f.payload.size());
      server.mgr.on_datagram({kClientAddr, encode_fragment(f)});
      controls_ok = unwrap_token(delegate(s, inner, net.random(), net.now()), s, net.now()) == inner;
      net.sleep_for(Millis{50});
      controls_ok = controls_ok && accepted == 2;
      accepted = 0;
    }
    Gen g(5);
    auto mutate = [&](Bytes b) {
      b[g.index(b.size())] ^= static_cast<std::uint8_t>(g.range(1, 255));
      return b;
    };
    for (int i = 0; i < kMutations; ++i) {
      switch (i % 3) {
        case 0: {
          ++resumes;
          auto msg = encode_resume(make_resume(s, CommandLevel::Read, as_bytes("cmd"), net.random()));
          auto ch = net.connect(kServerAddr, kLong);
          ch->write(mutate(std::move(msg)), kLong);
          ch->close();
          break;
        }
        case 1: {
          ++tokens;
          try {
            unwrap_token(mutate(delegate(s, inner, net.random(), net.now())), s, net.now());
            ++token_accepts;
          } catch (const Error&) {
          }
          break;
        }
        default: {
          ++datagrams;
          Fragment f;
          f.header.datagram_id = static_cast<std::uint64_t>(i) + 1;
          f.payload = mutate(seal_datagram(s, CommandLevel::Read, as_bytes("dgram"), net.random()));
          f.header.payload_len = static_cast<std::uint16_t>(f.payload.size());
          server.mgr.on_datagram({kClientAddr, encode_fragment(f)});
        }
      }
    }
    net.sleep_for(Millis{500});
  });
  o.check(controls_ok, "unmutated controls were not accepted");
  o.check(accepted == 0, num(accepted) + " mutated resumes/datagrams accepted");
  o.check(token_accepts == 0, num(token_accepts) + " mutated tokens accepted");
  if (o.pass)
    o.detail = num(resumes) + " resumes, " + num(tokens) + " tokens, " + num(datagrams) + " datagrams; 0 accepted";
  return o;
}

Outcome invalidation_convergence() {
  Outcome o;
  sim::SimNet net(6);
  net.set_default_link({Millis{5}});
  SimServer server(net, policy(kServerPolicy));
  SessionManager client(net, policy(kClientPolicy), kClientAddr);
  std::uint64_t before = 0, after_wipe = 0, after_more = 0;
  bool replies_ok = true;
  net.run("client", [&] {
    server.start(net);
    client.call(kServerAddr, CommandLevel::Read, as_bytes("a"), kLong);
    before = net.ledger().node_total("client").authentications;
    server.mgr.cache().clear();
    replies_ok &= client.call(kServerAddr, CommandLevel::Read, as_bytes("b"), kLong).reply == to_bytes("b");
    after_wipe = net.ledger().node_total("client").authentications;
    for (int i = 0; i < 5; ++i)
      replies_ok &= client.call(kServerAddr, CommandLevel::Read, as_bytes("c"), kLong).reply == to_bytes("c");
    after_more = net.ledger().node_total("client").authentications;
  });
  o.check(replies_ok, "a reply was lost");
  o.check(after_wipe - before == 1, "extra establishes " + num(after_wipe - before));
  o.check(after_more == after_wipe, "establishes after convergence " + num(after_more - after_wipe));
  o.check(server.mgr.stats().invalidations_sent == 1, "invalidations " + num(server.mgr.stats().invalidations_sent));
  return o;
}

Outcome wire_codec() {
  Outcome o;
  Gen g(7);
  for (int i = 0; i < kCodecTrials && o.pass; ++i) {
    const auto v = g.value();
    const auto enc = wire::encode(v);
    o.check(wire::decode(enc) == v && wire::encode(wire::decode(enc)) == enc, "round trip " + std::to_string(i));
  }
  const auto vectors = testing_support::golden_vectors("wire.txt");
  const auto want = [&](const std::string& n) { return to_hex(from_hex(vectors.at(n))); };
  using namespace wire;
  wire::RecordAd ab;
  ab.set_int("a", 1).set_string("b", "x");
  wire::RecordAd nested;
  nested.set_record("r", {});
  const std::pair<std::string, Bytes> cases[] = {
      {"int_zero", encode_int(std::int64_t{0})},
      {"int_42", encode_int(std::int64_t{42})},
      {"int_minus1", encode_int(std::int32_t{-1})},
      {"int_2pow40", encode_int(std::int64_t{1} << 40)},
      {"int_min64", encode_int(std::numeric_limits<std::int64_t>::min())},
      {"float_zero", encode_float(0.0)},
      {"float_1_5", encode_float(1.5)},
      {"float_minus2", encode_float(-2.0)},
      {"float_0_1_single", encode_float(0.1f)},
      {"float_0_1_double", encode_float(0.1)},
      {"string_empty", encode_string("")},
      {"string_abc", encode_string("abc")},
      {"record_ab", encode_record(ab)},
      {"record_empty", encode_record({})},
      {"record_nested", encode_record(nested)},
      {"blob_empty", encode_blob({})},
      {"blob_hi", encode_blob(as_bytes("hi"))},
      {"frame_plain", encode_frame({kFramePlain, to_bytes("hi"), std::nullopt})},
      {"frame_mac", encode_frame({kFrameMacPresent, to_bytes("hi"), Bytes{0xaa, 0xbb}})},
      {"frame_enc_mac", encode_frame({kFrameEncrypted | kFrameMacPresent, Bytes{0xff}, Bytes{0xee}})},
  };
  for (const auto& [name, bytes] : cases) o.check(to_hex(bytes) == want(name), "golden " + name);
  if (o.pass) o.detail = std::to_string(kCodecTrials) + " round trips, " + num(std::size(cases)) + " vectors";
  return o;
}

Outcome error_stack_golden() {
  Outcome o;
  ErrorStack s;
  s.push(851968, "GLOBUS", "no valid proxy file");
  s.push(5003, "GSI", "unable to acquire credential");
  s.push(errc::kAuthenticationFailed, subsys::kAuth, "authentication failed");
  s.push(errc::kConnectionRefused, subsys::kSocket, "connection refused");
  o.check(s.format() ==
              "111 -- connection refused\n"
              "1003 -- authentication failed\n"
              "5003 -- GSI: unable to acquire credential\n"
              "851968 -- GLOBUS: no valid proxy file",
          "got:\n" + s.format());
  return o;
}

Outcome collector_tree() {
  Outcome o;
  const auto r = harness::run_collector_tree_experiment(kTreeFanout, 1, kTreeStartds, kTreeSessions);
  const std::uint64_t per_leaf = kTreeStartds * kTreeSessions / kTreeFanout;
  o.check(r.root_establishes == kTreeFanout, "root " + num(r.root_establishes));
  o.check(r.leaf_mean == static_cast<double>(per_leaf), "leaf mean " + std::to_string(r.leaf_mean));
  o.check(r.leaf_min == per_leaf && r.leaf_max == per_leaf, "leaf range " + num(r.leaf_min) + ".." + num(r.leaf_max));
  if (o.pass) o.detail = "root " + num(r.root_establishes) + ", leaves " + num(per_leaf) + " each";
  return o;
}

Outcome determinism() {
  Outcome o;
  auto all_csv = [] {
    std::vector<harness::LatencyReport> lat;
    for (double ms : {0.0, 150.0}) {
      harness::LatencyConfig c;
      c.latency_ms = ms;
      c.seed = 42;
      lat.push_back(harness::run_latency_experiment(c));
    }
    harness::PoolTopology topo;
    topo.startds = 20;
    const auto mm = report::matchmaking_table({harness::run_matchmaking_scenario(topo, true, 42),
                                               harness::run_matchmaking_scenario(topo, false, 42)});
    const auto tree = harness::run_collector_tree_experiment(5, 1, 50, 4, 1.0, 42);
    return report::latency_csv_table(lat).csv() + mm.csv() + report::tree_table(tree).csv() +
           report::tree_detail_table(tree).csv();
  };
  const auto a = all_csv();
  const auto b = all_csv();
  o.check(!a.empty() && a == b, "reports differ");
  if (o.pass) o.detail = num(a.size()) + " identical bytes";
  return o;
}

}  // namespace

int main() {
  using std::chrono::seconds;
  criterion(1, "zero-RTT resume", seconds(5), zero_rtt_resume);
  criterion(2, "latency table shape", seconds(30), latency_table_shape);
  criterion(3, "delegation removes schedd authentication", seconds(30), delegation_counts);
  criterion(4, "oversized secure datagram", seconds(60), oversized_datagram);
  criterion(5, "tamper rejection", seconds(60), tamper_rejection);
  criterion(6, "invalidation convergence", seconds(30), invalidation_convergence);
  criterion(7, "wire codec", seconds(30), wire_codec);
  criterion(8, "error stack golden", seconds(5), error_stack_golden);
  criterion(9, "collector tree load", seconds(120), collector_tree);
  criterion(10, "determinism", seconds(60), determinism);
  return failures;
}
