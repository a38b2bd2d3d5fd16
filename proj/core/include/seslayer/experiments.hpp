#pragma once

// Simulated experiments: the latency table, the matchmaking scenario with and
// without delegation, and collector-tree load. Every run builds its own
// SimNet from a seed, so identical inputs give identical reports.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seslayer/clock.hpp"
#include "seslayer/policy.hpp"

namespace seslayer::harness {

// ---------------------------------------------------------------------------
// Latency table

struct LatencyConfig {
  // Ping round-trip time; each link direction gets half.
  double latency_ms = 150.0;
  auth::MethodCost gsi = auth::default_cost(auth::kGsi);
  std::uint64_t seed = 1;
};

struct LatencyRow {
  std::string operation;
  Micros time{0};
  // Round trips the measured side waited on, connect included.
  std::uint64_t round_trips = 0;
};

struct LatencyReport {
  double latency_ms = 0;
  std::vector<LatencyRow> rows;
  // Resume round trips attributed to the resume operation itself, and the
  // messages it sent before the first payload byte.
  std::uint64_t resume_round_trips = 0;
  std::uint64_t resume_messages = 0;

  const LatencyRow& row(std::string_view operation) const;
};

inline constexpr std::string_view kRowPing = "ping";
inline constexpr std::string_view kRowBareClient = "bare GSI auth (client)";
inline constexpr std::string_view kRowBareServer = "bare GSI auth (server)";
inline constexpr std::string_view kRowSetupClient = "session setup with GSI (client)";
inline constexpr std::string_view kRowSetupServer = "session setup with GSI (server)";
inline constexpr std::string_view kRowResume = "session resume";

LatencyReport run_latency_experiment(const LatencyConfig& cfg);

// ---------------------------------------------------------------------------
// Pool topology
//
// Text format, one directive per line, '#' starts a comment:
//   STARTDS n                 number of startds
//   SCHEDDS n                 number of schedds sharing the jobs
//   SESSIONS_PER_STARTD n     sessions each startd opens with its collector
//   JOBS n                    contacts to make (default: one per startd)
//   LATENCY_MS x              one-way link latency
//   NO_COMMON_AUTH yes|no     schedds and startds share no method
//   COLLECTOR_POLICY file     policy overrides (paths relative to the
//   SCHEDD_POLICY file        topology file); the built-in policies are
//   STARTD_POLICY file        used otherwise
//   TREE fanout depth         collector tree for the load experiment

struct PoolTopology {
  int startds = 50;
  int schedds = 1;
  int sessions_per_startd = 4;
  std::optional<int> jobs;
  double latency_ms = 1.0;
  bool no_common_auth = false;
  std::optional<std::string> collector_policy;
  std::optional<std::string> schedd_policy;
  std::optional<std::string> startd_policy;
  int tree_fanout = 0;
  int tree_depth = 0;

  int job_count() const { return jobs.value_or(startds); }
  // Throws Error(kConfigError).
  void validate() const;
  static PoolTopology parse(std::string_view text, const std::filesystem::path& base_dir = {});
  static PoolTopology load(const std::filesystem::path& path);
};

// Built-in policy text for each role.
std::string default_collector_policy();
std::string default_schedd_policy(bool no_common_auth);
std::string default_startd_policy(bool no_common_auth);

// ---------------------------------------------------------------------------
// Matchmaking

struct MatchmakingReport {
  int startds = 0;
  int schedds = 0;
  bool delegation = false;
  bool no_common_auth = false;
  std::uint64_t startup_establishes = 0;
  // Counted after startup.
  std::uint64_t schedd_startd_authentications = 0;
  std::uint64_t collector_authentications = 0;
  std::uint64_t schedd_authentications = 0;
  std::uint64_t startd_authentications = 0;
  int contacts_ok = 0;
  int contacts_failed = 0;
  int contacts_delegated = 0;
  Micros makespan{0};
  double turnaround_hz = 0;
  // Mean virtual time of one startd establish during startup.
  Micros per_auth_cost{0};
  // Authentications the delegation path avoids at 25000 glideins times the
  // measured per-auth cost. A model, not a measurement.
  double extrapolated_avoided_s = 0;
  std::string first_error;
};

inline constexpr int kExtrapolationGlideins = 25000;

// Throws Error(kConfigError) before simulating if the topology is invalid.
MatchmakingReport run_matchmaking_scenario(const PoolTopology& topology, bool delegation, std::uint64_t seed = 1);

// ---------------------------------------------------------------------------
// Collector tree

struct CollectorLoad {
  std::string name;
  int level = 0;
  std::uint64_t establishes = 0;
};

struct TreeReport {
  int fanout = 0;
  int depth = 0;
  int startds = 0;
  int sessions_per_startd = 0;
  std::vector<CollectorLoad> collectors;
  std::uint64_t root_establishes = 0;
  std::uint64_t leaf_total = 0;
  std::uint64_t leaf_min = 0;
  std::uint64_t leaf_max = 0;
  double leaf_mean = 0;
  std::uint64_t max_load = 0;
  std::uint64_t flat_load = 0;
  Micros makespan{0};
};

// depth 0 is the flat topology: every startd registers with the root.
TreeReport run_collector_tree_experiment(int fanout, int depth, int startds, int sessions_per_startd = 4,
                                         double latency_ms = 1.0, std::uint64_t seed = 1);

}  // namespace seslayer::harness
