#include "seslayer/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>

#include "seslayer/auth.hpp"
#include "seslayer/crypto_suite.hpp"
#include "seslayer/daemons.hpp"
#include "seslayer/secman.hpp"
#include "seslayer/simnet.hpp"

namespace seslayer::harness {

namespace {

using session::SessionManager;

const Deadline kOpDeadline = Deadline::seconds(120);

Micros half_of_ms(double ms) { return Micros{std::llround(ms * 500.0)}; }
Micros of_ms(double ms) { return Micros{std::llround(ms * 1000.0)}; }

// Spawns every job and waits (in virtual time) until all have finished.
// Returns the latest finish time.
Micros run_parallel(sim::SimNet& net, std::vector<std::pair<std::string, std::function<void()>>> jobs) {
  struct State {
    std::size_t remaining = 0;
    Micros last{0};
  };
  auto st = std::make_shared<State>();
  st->remaining = jobs.size();
  for (auto& [node, fn] : jobs) {
    net.spawn(node, [&net, st, fn = std::move(fn)] {
      struct Done {
        sim::SimNet& net;
        State& st;
        ~Done() {
          --st.remaining;
          st.last = std::max(st.last, net.now());
        }
      } done{net, *st};
      fn();
    });
  }
  while (st->remaining > 0) net.sleep_for(Millis{1});
  return st->last;
}

std::uint64_t client_rts(sim::SimNet& net, const std::string& node) {
  return net.ledger().node_total(node).round_trips;
}

auth::SecurityPolicy parse_policy(const std::string& text, std::string_view role) {
  try {
    return auth::SecurityPolicy::parse(text);
  } catch (Error& e) {
    e.stack().push(errc::kConfigError, subsys::kHarness, "invalid " + std::string(role) + " policy");
    throw;
  }
}

constexpr std::string_view kGsiCa = "pool-ca-secret";

}  // namespace

// ---------------------------------------------------------------------------
// Latency table

const LatencyRow& LatencyReport::row(std::string_view operation) const {
  for (const auto& r : rows)
    if (r.operation == operation) return r;
  throw std::out_of_range("no latency row " + std::string(operation));
}

LatencyReport run_latency_experiment(const LatencyConfig& cfg) {
  if (!(cfg.latency_ms >= 0) || !std::isfinite(cfg.latency_ms))
    throw Error(errc::kConfigError, subsys::kHarness, "latency must be a non-negative number of milliseconds");

  sim::SimNet net(cfg.seed);
  net.set_link("client", "server", {half_of_ms(cfg.latency_ms)});

  const std::string subject = "/CN=client";
  auto server_policy = parse_policy(
      "NAME server\nMETHODS GSI\nSUITES AES192-CTR-HMAC-SHA256\nREQUIRE_ENCRYPTION yes\n"
      "GSI_CA " + std::string(kGsiCa) + "\nMAP gsi:* *\nALLOW * *\n",
      "server");
  auto client_policy = parse_policy("NAME client\nMETHODS GSI\nSUITES AES192-CTR-HMAC-SHA256\n"
                                    "REQUIRE_ENCRYPTION yes\nCREDENTIAL GSI " + subject + " " +
                                        auth::issue_gsi_certificate(kGsiCa, subject) + "\nALLOW * *\n",
                                    "client");
  server_policy.costs[std::string(auth::kGsi)] = cfg.gsi;
  client_policy.costs[std::string(auth::kGsi)] = cfg.gsi;

  const Address ping_addr{"server", 7};
  const Address bare_addr{"server", 9619};
  const Address secure_addr{"server", 9618};

  SessionManager server(net, server_policy, secure_addr);
  SessionManager client(net, client_policy, Address{"client", 9618});
  server.set_handler([](session::CommandContext& ctx) {
    if (ctx.stream) ctx.stream->send(as_bytes(std::string_view("ok")), kOpDeadline);
  });

  struct ServerTimes {
    bool bare_done = false;
    Micros bare{0};
    std::uint64_t bare_rts = 0;
    bool established_done = false;
    std::vector<Micros> accepted;
    Micros established{0};
    std::uint64_t setup_rts_at_accept = 0;
    std::uint64_t setup_rts = 0;
  } srv;
  server.set_on_established([&](const session::Session&) {
    srv.established = net.now();
    srv.established_done = true;
    srv.setup_rts = client_rts(net, "server") - srv.setup_rts_at_accept;
  });

  LatencyReport rep;
  rep.latency_ms = cfg.latency_ms;
  const auth::Negotiated bare_negotiated{std::string(auth::kGsi), std::string(crypto::kAesSuite),
                                         auth::ProtectionMode::FullEncrypt};
  const Bytes bare_binding = crypto::sha256(as_bytes(std::string_view("bare authentication")));

  net.run("client", [&] {
    auto ping_l = net.listen(ping_addr);
    auto bare_l = net.listen(bare_addr);
    auto secure_l = net.listen(secure_addr);

    net.spawn("server", [&] {
      auto ch = ping_l->accept(kOpDeadline);
      if (!ch) return;
      auto b = ch->read_n(1, kOpDeadline);
      ch->write(b, kOpDeadline);
    });
    net.spawn("server", [&] {
      auto ch = bare_l->accept(kOpDeadline);
      if (!ch) return;
      const Micros t0 = net.now();
      const auto r0 = client_rts(net, "server");
      auth::authenticate({net, *ch, kOpDeadline, bare_binding, bare_negotiated}, server_policy,
                         auth::Role::Server);
      srv.bare = net.now() - t0;
      srv.bare_rts = client_rts(net, "server") - r0;
      srv.bare_done = true;
    });
    net.spawn("server", [&] {
      for (;;) {
        auto ch = secure_l->accept(kOpDeadline);
        if (!ch) continue;
        srv.accepted.push_back(net.now());
        srv.setup_rts_at_accept = client_rts(net, "server");
        auto shared = std::make_shared<std::unique_ptr<StreamChannel>>(std::move(ch));
        net.spawn("server", [&server, shared] { server.serve_connection(std::move(*shared)); });
      }
    });

    {
      auto ch = net.connect(ping_addr, kOpDeadline);
      const auto r0 = client_rts(net, "client");
      const Micros t0 = net.now();
      ch->write(Bytes{0x70}, kOpDeadline);
      ch->read_n(1, kOpDeadline);
      rep.rows.push_back({std::string(kRowPing), net.now() - t0, client_rts(net, "client") - r0});
      ch->close();
    }
    {
      const auto r0 = client_rts(net, "client");
      const Micros t0 = net.now();
      auto ch = net.connect(bare_addr, kOpDeadline);
      auth::authenticate({net, *ch, kOpDeadline, bare_binding, bare_negotiated}, client_policy,
                         auth::Role::Client);
      rep.rows.push_back({std::string(kRowBareClient), net.now() - t0, client_rts(net, "client") - r0});
      ch->close();
      // Let the server side finish before reading its timings.
      while (!srv.bare_done) net.sleep_for(Millis{1});
      rep.rows.push_back({std::string(kRowBareServer), srv.bare, srv.bare_rts});
    }
    {
      const auto r0 = client_rts(net, "client");
      const Micros t0 = net.now();
      auto ch = net.connect(secure_addr, kOpDeadline);
      {
        OpScope op(net.ledger(), net.clock(), "establish");
        client.establish(*ch, secure_addr, auth::CommandLevel::Write, kOpDeadline);
      }
      rep.rows.push_back({std::string(kRowSetupClient), net.now() - t0, client_rts(net, "client") - r0});
      while (!srv.established_done) net.sleep_for(Millis{1});
      ch->close();
      rep.rows.push_back({std::string(kRowSetupServer), srv.established - srv.accepted.at(0), srv.setup_rts});
    }
    {
      const auto r0 = client_rts(net, "client");
      const auto before = net.ledger().get("client", "resume");
      const Micros t0 = net.now();
      auto c = client.open(secure_addr, auth::CommandLevel::Write, as_bytes(std::string_view("ping")),
                           kOpDeadline);
      rep.rows.push_back({std::string(kRowResume), net.now() - t0, client_rts(net, "client") - r0});
      const auto after = net.ledger().get("client", "resume");
      rep.resume_round_trips = after.round_trips - before.round_trips;
      rep.resume_messages = after.messages_sent - before.messages_sent;
      if (c.established)
        throw Error(errc::kProtocolError, subsys::kHarness, "resume row re-established instead of resuming");
      c.stream->receive(kOpDeadline);
      c.channel->close();
    }
  });
  return rep;
}

// ---------------------------------------------------------------------------
// Topology

void PoolTopology::validate() const {
  auto bad = [](const std::string& why) { throw Error(errc::kConfigError, subsys::kHarness, why); };
  if (startds < 1) bad("a pool needs at least one startd");
  if (schedds < 1) bad("a pool needs at least one schedd");
  if (sessions_per_startd < 1) bad("SESSIONS_PER_STARTD must be at least 1");
  if (jobs && (*jobs < 0 || *jobs > startds)) bad("JOBS must be between 0 and the number of startds");
  if (!(latency_ms >= 0) || !std::isfinite(latency_ms)) bad("LATENCY_MS must be a non-negative number");
  if (tree_fanout < 0 || tree_depth < 0) bad("TREE values must not be negative");
  if (tree_depth > 0 && tree_fanout < 1) bad("a collector tree needs fanout of at least 1");
  if (tree_depth > 3) bad("collector trees deeper than 3 levels are not supported");
}

PoolTopology PoolTopology::parse(std::string_view text, const std::filesystem::path& base_dir) {
  PoolTopology t;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ws(raw);
    std::vector<std::string> w;
    for (std::string x; ws >> x;) w.push_back(x);
    if (w.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw Error(errc::kConfigError, subsys::kConfig, "topology line " + std::to_string(lineno) + ": " + why);
    };
    auto need = [&](std::size_t n) {
      if (w.size() != n) fail(w[0] + " expects " + std::to_string(n - 1) + " argument(s)");
    };
    auto integer = [&](const std::string& v) {
      int out = 0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
      if (ec != std::errc{} || p != v.data() + v.size()) fail("expected an integer, got '" + v + "'");
      return out;
    };
    auto read_file = [&](const std::string& name) {
      std::filesystem::path p(name);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      std::ifstream f(p);
      if (!f) fail("cannot read policy file '" + p.string() + "'");
      std::ostringstream ss;
      ss << f.rdbuf();
      return ss.str();
    };
    const auto& d = w[0];
    if (d == "STARTDS") {
      need(2);
      t.startds = integer(w[1]);
    } else if (d == "SCHEDDS") {
      need(2);
      t.schedds = integer(w[1]);
    } else if (d == "SESSIONS_PER_STARTD") {
      need(2);
      t.sessions_per_startd = integer(w[1]);
    } else if (d == "JOBS") {
      need(2);
      t.jobs = integer(w[1]);
    } else if (d == "LATENCY_MS") {
      need(2);
      try {
        std::size_t used = 0;
        t.latency_ms = std::stod(w[1], &used);
        if (used != w[1].size()) throw std::invalid_argument(w[1]);
      } catch (const std::exception&) {
        fail("expected a number, got '" + w[1] + "'");
      }
    } else if (d == "NO_COMMON_AUTH") {
      need(2);
      if (w[1] == "yes") t.no_common_auth = true;
      else if (w[1] == "no") t.no_common_auth = false;
      else fail("expected yes or no, got '" + w[1] + "'");
    } else if (d == "COLLECTOR_POLICY") {
      need(2);
      t.collector_policy = read_file(w[1]);
    } else if (d == "SCHEDD_POLICY") {
      need(2);
      t.schedd_policy = read_file(w[1]);
    } else if (d == "STARTD_POLICY") {
      need(2);
      t.startd_policy = read_file(w[1]);
    } else if (d == "TREE") {
      need(3);
      t.tree_fanout = integer(w[1]);
      t.tree_depth = integer(w[2]);
    } else {
      fail("unknown directive '" + d + "'");
    }
  }
  t.validate();
  return t;
}

PoolTopology PoolTopology::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(errc::kConfigError, subsys::kConfig, "cannot read topology file '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse(ss.str(), path.parent_path());
  } catch (Error& e) {
    e.stack().push(errc::kConfigError, subsys::kConfig, "invalid topology file '" + path.string() + "'");
    throw;
  }
}

std::string default_collector_policy() {
  return R"(NAME collector
METHODS TOKENFILE PASSWORD
SUITES AES192-CTR-HMAC-SHA256
REQUIRE_ENCRYPTION yes
PASSWORD schedd schedd-secret
TOKEN pool pool-token-secret
CREDENTIAL TOKENFILE pool pool-token-secret
MAP password:schedd schedd
MAP token:pool pool
ALLOW schedd DAEMON,READ
ALLOW pool DAEMON,READ
)";
}

std::string default_schedd_policy(bool no_common_auth) {
  (void)no_common_auth;  // the schedd side is the same either way
  return R"(NAME schedd
METHODS PASSWORD
SUITES AES192-CTR-HMAC-SHA256
REQUIRE_ENCRYPTION yes
CREDENTIAL PASSWORD schedd schedd-secret
PASSWORD schedd schedd-secret
MAP password:schedd schedd
ALLOW schedd READ
)";
}

std::string default_startd_policy(bool no_common_auth) {
  std::string p = R"(NAME startd
SUITES AES192-CTR-HMAC-SHA256
REQUIRE_ENCRYPTION yes
CREDENTIAL TOKENFILE pool pool-token-secret
MAP password:schedd schedd
MAP claim:* claimant
ALLOW schedd WRITE,READ
ALLOW claimant WRITE
)";
  p += no_common_auth ? "METHODS TOKENFILE\n" : "METHODS TOKENFILE PASSWORD\nPASSWORD schedd schedd-secret\n";
  return p;
}

// ---------------------------------------------------------------------------
// Matchmaking

MatchmakingReport run_matchmaking_scenario(const PoolTopology& topo, bool delegation, std::uint64_t seed) {
  topo.validate();
  auto cpol = parse_policy(topo.collector_policy.value_or(default_collector_policy()), "collector");
  auto spol = parse_policy(topo.schedd_policy.value_or(default_schedd_policy(topo.no_common_auth)), "schedd");
  auto dpol = parse_policy(topo.startd_policy.value_or(default_startd_policy(topo.no_common_auth)), "startd");

  sim::SimNet net(seed);
  net.set_capture(false);
  net.set_default_link({of_ms(topo.latency_ms)});

  // Node names double as host names, so the policy names are overridden.
  cpol.name = "collector";
  const Address caddr{"collector", 9618};
  pool::Collector collector(net, cpol, caddr, {delegation});
  std::vector<std::unique_ptr<pool::Startd>> startds;
  std::vector<std::unique_ptr<pool::Schedd>> schedds;
  for (int i = 0; i < topo.startds; ++i) {
    auto p = dpol;
    p.name = "startd-" + std::to_string(i);
    startds.push_back(std::make_unique<pool::Startd>(
        net, p, Address{p.name, 9618}, pool::StartdOptions{caddr, topo.sessions_per_startd, delegation}));
  }
  for (int i = 0; i < topo.schedds; ++i) {
    auto p = spol;
    p.name = "schedd-" + std::to_string(i);
    schedds.push_back(std::make_unique<pool::Schedd>(net, p, Address{p.name, 9618}, caddr));
  }

  MatchmakingReport rep;
  rep.startds = topo.startds;
  rep.schedds = topo.schedds;
  rep.delegation = delegation;
  rep.no_common_auth = topo.no_common_auth;

  net.run("harness", [&] {
    collector.start();
    for (auto& s : startds) s->start();
    for (auto& s : schedds) s->start();

    std::vector<std::pair<std::string, std::function<void()>>> boot;
    for (auto& s : startds) boot.emplace_back(s->name(), [&s] { s->startup(kOpDeadline); });
    run_parallel(net, std::move(boot));

    rep.startup_establishes = net.ledger().node_total("collector").establishes_served;
    LedgerCounters est;
    for (auto& s : startds) est += net.ledger().get(s->name(), "establish");
    const auto n_est = static_cast<std::int64_t>(topo.startds) * topo.sessions_per_startd;
    rep.per_auth_cost = Micros{est.wall_time.count() / std::max<std::int64_t>(1, n_est)};
    net.ledger().reset();

    std::vector<pool::ContactResult> results(static_cast<std::size_t>(topo.job_count()));
    std::vector<std::pair<std::string, std::function<void()>>> work;
    for (int k = 0; k < topo.schedds; ++k) {
      auto* sd = schedds[static_cast<std::size_t>(k)].get();
      work.emplace_back(sd->name(), [&, sd, k] {
        for (int j = k; j < topo.job_count(); j += topo.schedds)
          results[static_cast<std::size_t>(j)] = sd->match_and_activate(kOpDeadline);
      });
    }
    const Micros t0 = net.now();
    rep.makespan = run_parallel(net, std::move(work)) - t0;

    for (const auto& r : results) {
      if (r.ok) ++rep.contacts_ok;
      else {
        ++rep.contacts_failed;
        if (rep.first_error.empty()) rep.first_error = r.error;
      }
      if (r.delegated) ++rep.contacts_delegated;
    }
  });

  const auto& L = net.ledger();
  rep.collector_authentications = L.node_total("collector").authentications;
  for (auto& s : schedds) {
    rep.schedd_startd_authentications += L.authentications_with_prefix(s->name(), "startd");
    rep.schedd_authentications += L.node_total(s->name()).authentications;
  }
  for (auto& s : startds) rep.startd_authentications += L.node_total(s->name()).authentications;
  const double secs = static_cast<double>(rep.makespan.count()) / 1e6;
  rep.turnaround_hz = secs > 0 ? rep.contacts_ok / secs : 0;
  if (delegation)
    rep.extrapolated_avoided_s = kExtrapolationGlideins * static_cast<double>(rep.per_auth_cost.count()) / 1e6;
  return rep;
}

// ---------------------------------------------------------------------------
// Collector tree

TreeReport run_collector_tree_experiment(int fanout, int depth, int startd_count, int sessions_per_startd,
                                         double latency_ms, std::uint64_t seed) {
  PoolTopology topo;
  topo.startds = startd_count;
  topo.sessions_per_startd = sessions_per_startd;
  topo.tree_fanout = fanout;
  topo.tree_depth = depth;
  topo.latency_ms = latency_ms;
  topo.validate();
  if (fanout < 1) throw Error(errc::kConfigError, subsys::kHarness, "fanout must be at least 1");

  auto cpol = parse_policy(default_collector_policy(), "collector");
  auto dpol = parse_policy(default_startd_policy(false), "startd");

  sim::SimNet net(seed);
  net.set_capture(false);
  net.set_default_link({of_ms(latency_ms)});

  struct Node {
    std::unique_ptr<pool::Collector> c;
    int level;
    int parent;
  };
  std::vector<Node> tree;
  auto add = [&](std::string name, int level, int parent) {
    auto p = cpol;
    p.name = name;
    tree.push_back({std::make_unique<pool::Collector>(net, p, Address{name, 9618}, pool::CollectorOptions{false}),
                    level, parent});
  };
  add("collector", 0, -1);
  std::vector<int> frontier{0};
  for (int lvl = 1; lvl <= depth; ++lvl) {
    std::vector<int> next;
    for (int parent : frontier)
      for (int i = 0; i < fanout; ++i) {
        next.push_back(static_cast<int>(tree.size()));
        add("collector-" + std::to_string(lvl) + "-" + std::to_string(next.size() - 1), lvl, parent);
      }
    frontier = std::move(next);
  }
  const std::vector<int>& leaves = frontier;

  std::vector<std::unique_ptr<pool::Startd>> startds;
  for (int i = 0; i < startd_count; ++i) {
    auto p = dpol;
    p.name = "startd-" + std::to_string(i);
    const auto& leaf = *tree[static_cast<std::size_t>(leaves[static_cast<std::size_t>(i) % leaves.size()])].c;
    startds.push_back(std::make_unique<pool::Startd>(net, p, Address{p.name, 9618},
                                                     pool::StartdOptions{leaf.address(), sessions_per_startd, false}));
  }

  TreeReport rep;
  rep.fanout = fanout;
  rep.depth = depth;
  rep.startds = startd_count;
  rep.sessions_per_startd = sessions_per_startd;

  net.run("harness", [&] {
    for (auto& n : tree) n.c->start();
    for (auto& s : startds) s->start();
    const Micros t0 = net.now();
    // Inner collectors join their parents level by level, then the startds
    // register with the leaves.
    for (int lvl = 1; lvl <= depth; ++lvl) {
      std::vector<std::pair<std::string, std::function<void()>>> joins;
      for (auto& n : tree) {
        if (n.level != lvl) continue;
        auto* self = n.c.get();
        const auto parent = tree[static_cast<std::size_t>(n.parent)].c->address();
        joins.emplace_back(self->name(), [self, parent] { self->register_with(parent, kOpDeadline); });
      }
      run_parallel(net, std::move(joins));
    }
    std::vector<std::pair<std::string, std::function<void()>>> boot;
    for (auto& s : startds) boot.emplace_back(s->name(), [&s] { s->startup(kOpDeadline); });
    rep.makespan = run_parallel(net, std::move(boot)) - t0;
  });

  rep.leaf_min = UINT64_MAX;
  for (std::size_t i = 0; i < tree.size(); ++i) {
    const auto& n = tree[i];
    CollectorLoad load{n.c->name(), n.level, net.ledger().node_total(n.c->name()).establishes_served};
    rep.max_load = std::max(rep.max_load, load.establishes);
    if (std::find(leaves.begin(), leaves.end(), static_cast<int>(i)) != leaves.end()) {
      rep.leaf_total += load.establishes;
      rep.leaf_min = std::min(rep.leaf_min, load.establishes);
      rep.leaf_max = std::max(rep.leaf_max, load.establishes);
    }
    rep.collectors.push_back(std::move(load));
  }
  rep.root_establishes = rep.collectors.front().establishes;
  rep.leaf_mean = static_cast<double>(rep.leaf_total) / static_cast<double>(leaves.size());
  rep.flat_load = static_cast<std::uint64_t>(startd_count) * static_cast<std::uint64_t>(sessions_per_startd);
  return rep;
}

}  // namespace seslayer::harness
