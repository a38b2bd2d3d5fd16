#pragma once

// Plain-text tables and CSV for experiment reports.

#include <string>
#include <vector>

#include "seslayer/experiments.hpp"

namespace seslayer::report {

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  // Columns padded to their widest cell; the first column is left-aligned,
  // the rest right-aligned.
  std::string text() const;
  // RFC 4180 quoting where needed, '\n' line ends.
  std::string csv() const;
};

std::string seconds(Micros t);

// One column per latency, like a loopback/remote comparison.
Table latency_table(const std::vector<harness::LatencyReport>& reports);
// Long format: latency_ms, operation, seconds, round_trips.
Table latency_csv_table(const std::vector<harness::LatencyReport>& reports);
Table matchmaking_table(const std::vector<harness::MatchmakingReport>& reports);
Table tree_table(const harness::TreeReport& r);
// Per-collector loads.
Table tree_detail_table(const harness::TreeReport& r);

}  // namespace seslayer::report
