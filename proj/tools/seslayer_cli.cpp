// seslayer: run pool daemons over real sockets, query them, and run the
// simulated experiments.

#include <atomic>
#include <csignal>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "seslayer/daemons.hpp"
#include "seslayer/experiments.hpp"
#include "seslayer/posix_net.hpp"
#include "seslayer/report.hpp"

using namespace seslayer;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 64;

std::atomic<bool> g_interrupted{false};
std::mutex g_log_mu;

void on_signal(int) { g_interrupted.store(true); }

void log_line(const std::string& who, std::string_view msg) {
  std::lock_guard lk(g_log_mu);
  std::cerr << "[" << who << "] " << msg << std::endl;
}

void print_error(const ErrorStack& es) { std::cerr << es.format() << std::endl; }

ErrorStack one_frame(std::string message) {
  ErrorStack es;
  es.push(errc::kConfigError, subsys::kConfig, std::move(message));
  return es;
}

std::vector<bool> delegation_modes(const std::string& v) {
  if (v == "on") return {true};
  if (v == "off") return {false};
  return {true, false};
}

std::vector<double> parse_latencies(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    double v = -1;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || !(v >= 0) || v > 1e6)
      throw Error(errc::kConfigError, subsys::kConfig, "invalid latency '" + item + "' (milliseconds, >= 0)");
    out.push_back(v);
  }
  if (out.empty()) throw Error(errc::kConfigError, subsys::kConfig, "no latency given");
  return out;
}

void emit(const report::Table& t, bool csv) { std::cout << (csv ? t.csv() : t.text()); }

// ---------------------------------------------------------------------------

struct ServeOptions {
  std::string role;
  std::string policy;
  std::string listen = "127.0.0.1:9618";
  std::string collector = "127.0.0.1:9618";
  int sessions = 4;
  int jobs = 0;
  std::string delegation = "on";
  double duration_s = 0;
};

int cmd_serve(const ServeOptions& o) {
  auto role = pool::parse_role(o.role);
  if (!role) {
    print_error(one_frame("unknown role '" + o.role + "'"));
    return kExitConfig;
  }
  auth::SecurityPolicy policy;
  Address self, collector;
  try {
    policy = auth::SecurityPolicy::load(o.policy);
    self = Address::parse(o.listen);
    collector = Address::parse(o.collector);
  } catch (const Error& e) {
    print_error(e.stack());
    return kExitConfig;
  }
  const bool delegation = o.delegation != "off";

  PosixNetwork net;
  std::unique_ptr<pool::Daemon> daemon;
  pool::Startd* startd = nullptr;
  pool::Schedd* schedd = nullptr;
  try {
    switch (*role) {
      case pool::Role::Collector:
        daemon = std::make_unique<pool::Collector>(net, policy, self, pool::CollectorOptions{delegation});
        break;
      case pool::Role::Startd: {
        auto s = std::make_unique<pool::Startd>(net, policy, self,
                                                pool::StartdOptions{collector, o.sessions, delegation});
        startd = s.get();
        daemon = std::move(s);
        break;
      }
      case pool::Role::Schedd: {
        auto s = std::make_unique<pool::Schedd>(net, policy, self, collector);
        schedd = s.get();
        daemon = std::move(s);
        break;
      }
    }
    const std::string who = daemon->name();
    daemon->security().set_logger([who](std::string_view m) { log_line(who, m); });
    daemon->start();
    log_line(who, std::string(pool::to_string(*role)) + " listening on " + self.to_string());

    if (startd) {
      startd->startup(Deadline::seconds(30));
      log_line(who, "registered with collector " + collector.to_string());
    }
    if (schedd) {
      for (int i = 0; i < o.jobs; ++i) {
        auto r = schedd->match_and_activate(Deadline::seconds(30));
        if (r.ok)
          log_line(who, "claim activated at " + r.startd + (r.delegated ? " (delegated session)" : " (direct)"));
        else
          log_line(who, "contact failed:\n" + r.error);
      }
    }
  } catch (const Error& e) {
    print_error(e.stack());
    net.stop();
    return kExitRuntime;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto started = std::chrono::steady_clock::now();
  while (!g_interrupted.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (o.duration_s > 0 &&
        std::chrono::steady_clock::now() - started > std::chrono::duration<double>(o.duration_s))
      break;
  }
  log_line(daemon->name(), "shutting down");
  net.stop();
  daemon->stop();
  return 0;
}

// ---------------------------------------------------------------------------

struct QueryOptions {
  std::string policy;
  std::string collector = "127.0.0.1:9618";
  std::string self = "127.0.0.1:0";
  int repeat = 1;
  int interval_ms = 1000;
};

int cmd_query(const QueryOptions& o) {
  auth::SecurityPolicy policy;
  Address collector, self;
  try {
    policy = auth::SecurityPolicy::load(o.policy);
    collector = Address::parse(o.collector);
    self = Address::parse(o.self);
  } catch (const Error& e) {
    print_error(e.stack());
    return kExitConfig;
  }
  PosixNetwork net;
  session::SessionManager sec(net, policy, self);
  const std::string who = policy.name.empty() ? "query" : policy.name;
  sec.set_logger([who](std::string_view m) { log_line(who, m); });
  int status = 0;
  for (int i = 0; i < o.repeat; ++i) {
    if (i > 0) std::this_thread::sleep_for(std::chrono::milliseconds(o.interval_ms));
    try {
      auto r = sec.call(collector, auth::CommandLevel::Read, pool::encode(pool::make_command("QUERY")),
                        Deadline::seconds(10));
      log_line(who, std::string(r.established ? "established new session " : "resumed session ") +
                        r.session.session_id);
      auto rec = pool::decode(r.reply);
      if (rec.require_int("Ok") != 1) {
        std::cerr << rec.find_string("Error").value_or("query failed") << std::endl;
        status = kExitRuntime;
        continue;
      }
      const auto& ads = rec.require_record("Ads");
      std::cout << "ads: " << rec.require_int("Count") << "\n";
      for (const auto& e : ads.entries()) std::cout << "  " << e.name << " " << ads.require_string(e.name) << "\n";
      std::cout.flush();
    } catch (const Error& e) {
      print_error(e.stack());
      status = kExitRuntime;
    }
  }
  net.stop();
  return status;
}

// ---------------------------------------------------------------------------

struct BenchOptions {
  std::string latencies = "0,150";
  bool latencies_given = false;
  int gsi_rtts = 3;
  double gsi_client_ms = 1;
  double gsi_server_ms = 2;
  std::string delegation;
  int startds = 50;
  bool no_common_auth = false;
  double pool_latency_ms = 1;
  std::string tree;
  std::string format = "table";
  std::uint64_t seed = 1;
};

int cmd_bench(const BenchOptions& o) {
  const bool csv = o.format == "csv";
  try {
    const bool run_latency = o.latencies_given || (o.delegation.empty() && o.tree.empty());
    bool first = true;
    auto separate = [&] {
      if (!first) std::cout << "\n";
      first = false;
    };
    if (run_latency) {
      auth::MethodCost gsi{o.gsi_rtts, Micros{std::llround(o.gsi_client_ms * 1000)},
                           Micros{std::llround(o.gsi_server_ms * 1000)}};
      if (gsi.round_trips < 1 || gsi.client_cpu.count() < 0 || gsi.server_cpu.count() < 0)
        throw Error(errc::kConfigError, subsys::kConfig, "invalid GSI cost model");
      std::vector<harness::LatencyReport> reps;
      for (double l : parse_latencies(o.latencies)) reps.push_back(harness::run_latency_experiment({l, gsi, o.seed}));
      separate();
      emit(csv ? report::latency_csv_table(reps) : report::latency_table(reps), csv);
    }
    if (!o.delegation.empty()) {
      harness::PoolTopology t;
      t.startds = o.startds;
      t.no_common_auth = o.no_common_auth;
      t.latency_ms = o.pool_latency_ms;
      std::vector<harness::MatchmakingReport> reps;
      for (bool d : delegation_modes(o.delegation)) reps.push_back(harness::run_matchmaking_scenario(t, d, o.seed));
      separate();
      emit(report::matchmaking_table(reps), csv);
    }
    if (!o.tree.empty()) {
      int fanout = 0, depth = 0;
      char sep = 0;
      std::istringstream ts(o.tree);
      if (!(ts >> fanout >> sep >> depth) || sep != ',' || !ts.eof())
        throw Error(errc::kConfigError, subsys::kConfig, "--tree expects FANOUT,DEPTH");
      auto r = harness::run_collector_tree_experiment(fanout, depth, o.startds, 4, o.pool_latency_ms, o.seed);
      separate();
      emit(report::tree_table(r), csv);
    }
  } catch (const Error& e) {
    print_error(e.stack());
    return e.code() == errc::kConfigError ? kExitUsage : kExitRuntime;
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct ScenarioOptions {
  std::string file;
  std::string delegation = "both";
  std::string format = "table";
  std::uint64_t seed = 1;
  bool detail = false;
};

int cmd_scenario(const ScenarioOptions& o) {
  const bool csv = o.format == "csv";
  harness::PoolTopology topo;
  try {
    topo = harness::PoolTopology::load(o.file);
  } catch (const Error& e) {
    print_error(e.stack());
    return kExitConfig;
  }
  try {
    std::vector<harness::MatchmakingReport> reps;
    for (bool d : delegation_modes(o.delegation)) reps.push_back(harness::run_matchmaking_scenario(topo, d, o.seed));
    emit(report::matchmaking_table(reps), csv);
    if (topo.tree_fanout > 0) {
      auto r = harness::run_collector_tree_experiment(topo.tree_fanout, topo.tree_depth, topo.startds,
                                                      topo.sessions_per_startd, topo.latency_ms, o.seed);
      std::cout << "\n";
      emit(report::tree_table(r), csv);
      if (o.detail) {
        std::cout << "\n";
        emit(report::tree_detail_table(r), csv);
      }
    }
  } catch (const Error& e) {
    print_error(e.stack());
    return e.code() == errc::kConfigError ? kExitConfig : kExitRuntime;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Session-layer security demo: live pool daemons and simulated experiments"};
  app.require_subcommand(1);
  const auto formats = CLI::IsMember({"table", "csv"});
  const auto modes = CLI::IsMember({"on", "off", "both"});

  ServeOptions so;
  auto* serve = app.add_subcommand("serve", "Run a collector, schedd or startd over real sockets");
  serve->add_option("--role", so.role, "collector, schedd or startd")->required();
  serve->add_option("--policy", so.policy, "Policy file")->required();
  serve->add_option("--listen", so.listen, "Daemon address host:port")->capture_default_str();
  serve->add_option("--collector", so.collector, "Collector address (schedd, startd)")->capture_default_str();
  serve->add_option("--sessions", so.sessions, "Startup sessions a startd opens with the collector")
      ->capture_default_str()
      ->check(CLI::Range(1, 64));
  serve->add_option("--jobs", so.jobs, "Matches a schedd requests after starting")->check(CLI::Range(0, 100000));
  serve->add_option("--delegation", so.delegation, "Claim delegation through the collector")
      ->capture_default_str()
      ->check(CLI::IsMember({"on", "off"}));
  serve->add_option("--duration", so.duration_s, "Exit after this many seconds (0 = until interrupted)");

  QueryOptions qo;
  auto* query = app.add_subcommand("query", "Ask a collector for its advertisements");
  query->add_option("--policy", qo.policy, "Client policy file")->required();
  query->add_option("--collector", qo.collector, "Collector address")->capture_default_str();
  query->add_option("--self", qo.self, "Address announced to the collector")->capture_default_str();
  query->add_option("--repeat", qo.repeat, "Number of queries; later ones resume the session")
      ->capture_default_str()
      ->check(CLI::Range(1, 100000));
  query->add_option("--interval-ms", qo.interval_ms, "Pause between queries")
      ->capture_default_str()
      ->check(CLI::Range(0, 3600000));

  BenchOptions bo;
  auto* bench = app.add_subcommand("bench", "Simulated latency table, matchmaking and collector-tree runs");
  auto* lat = bench->add_option("--latency-ms", bo.latencies, "Comma-separated ping times in ms")
                  ->capture_default_str();
  bench->add_option("--gsi-rtts", bo.gsi_rtts, "Round trips of the GSI stub")->capture_default_str()->check(
      CLI::Range(1, 100));
  bench->add_option("--gsi-client-ms", bo.gsi_client_ms, "Client CPU cost of the GSI stub")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1e6));
  bench->add_option("--gsi-server-ms", bo.gsi_server_ms, "Server CPU cost of the GSI stub")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1e6));
  bench->add_option("--delegation", bo.delegation, "Run the matchmaking scenario: on, off or both")->check(modes);
  bench->add_option("--startds", bo.startds, "Startds in the matchmaking and tree runs")
      ->capture_default_str()
      ->check(CLI::Range(1, 5000));
  bench->add_flag("--no-common-auth", bo.no_common_auth, "Schedd and startds share no authentication method");
  bench->add_option("--pool-latency-ms", bo.pool_latency_ms, "One-way link latency in pool runs")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1e5));
  bench->add_option("--tree", bo.tree, "Collector tree FANOUT,DEPTH");
  bench->add_option("--format", bo.format, "table or csv")->capture_default_str()->check(formats);
  bench->add_option("--seed", bo.seed, "Simulation seed")->capture_default_str();

  ScenarioOptions sco;
  auto* scenario = app.add_subcommand("scenario", "Run the matchmaking scenario from a topology file");
  scenario->add_option("topology", sco.file, "Topology file")->required();
  scenario->add_option("--delegation", sco.delegation, "on, off or both")->capture_default_str()->check(modes);
  scenario->add_option("--format", sco.format, "table or csv")->capture_default_str()->check(formats);
  scenario->add_option("--seed", sco.seed, "Simulation seed")->capture_default_str();
  scenario->add_flag("--detail", sco.detail, "Per-collector loads for tree topologies");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(one_frame(e.what()));
    std::cerr << "run with --help for usage" << std::endl;
    return kExitUsage;
  }
  bo.latencies_given = lat->count() > 0;

  if (*serve) return cmd_serve(so);
  if (*query) return cmd_query(qo);
  if (*bench) return cmd_bench(bo);
  return cmd_scenario(sco);
}
