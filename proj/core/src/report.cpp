#include "seslayer/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace seslayer::report {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string secs(Micros t, int digits) { return fixed(static_cast<double>(t.count()) / 1e6, digits); }

std::string latency_label(double ms) {
  // Trim trailing zeros: 150 -> "150", 0.5 -> "0.5".
  auto s = fixed(ms, 3);
  while (s.back() == '0') s.pop_back();
  if (s.back() == '.') s.pop_back();
  return s;
}

std::string yes_no(bool b) { return b ? "on" : "off"; }

}  // namespace

std::string seconds(Micros t) { return secs(t, 6); }

std::string Table::text() const {
  std::vector<std::size_t> width(columns.size(), 0);
  for (std::size_t i = 0; i < columns.size(); ++i) width[i] = columns[i].size();
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());

  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    std::string l;
    for (std::size_t i = 0; i < width.size(); ++i) {
      const std::string cell = i < cells.size() ? cells[i] : "";
      const std::string pad(width[i] - cell.size(), ' ');
      if (i > 0) l += "  ";
      l += i == 0 ? cell + pad : pad + cell;
    }
    while (!l.empty() && l.back() == ' ') l.pop_back();
    out << l << '\n';
  };
  line(columns);
  std::string rule;
  for (std::size_t i = 0; i < width.size(); ++i) rule += (i ? "  " : "") + std::string(width[i], '-');
  out << rule << '\n';
  for (const auto& r : rows) line(r);
  return out.str();
}

std::string Table::csv() const {
  auto cell = [](const std::string& c) {
    if (c.find_first_of(",\"\n") == std::string::npos) return c;
    std::string q = "\"";
    for (char ch : c) {
      if (ch == '"') q += '"';
      q += ch;
    }
    return q + "\"";
  };
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cell(cells[i]);
    out << '\n';
  };
  line(columns);
  for (const auto& r : rows) line(r);
  return out.str();
}

Table latency_table(const std::vector<harness::LatencyReport>& reports) {
  Table t;
  t.columns.push_back("operation (seconds)");
  for (const auto& r : reports) t.columns.push_back(latency_label(r.latency_ms) + " ms");
  if (reports.empty()) return t;
  for (const auto& row : reports.front().rows) {
    std::vector<std::string> cells{row.operation};
    for (const auto& r : reports) cells.push_back(secs(r.row(row.operation).time, 3));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

Table latency_csv_table(const std::vector<harness::LatencyReport>& reports) {
  Table t;
  t.columns = {"latency_ms", "operation", "seconds", "round_trips"};
  for (const auto& r : reports)
    for (const auto& row : r.rows)
      t.rows.push_back({latency_label(r.latency_ms), row.operation, seconds(row.time), std::to_string(row.round_trips)});
  return t;
}

Table matchmaking_table(const std::vector<harness::MatchmakingReport>& reports) {
  Table t;
  t.columns = {"delegation",       "no_common_auth",     "startds",         "schedd_startd_auths",
               "collector_auths",  "schedd_auths",       "startd_auths",    "contacts_ok",
               "contacts_failed",  "delegated",          "makespan_s",      "turnaround_hz",
               "per_auth_s",       "avoided_at_25000_s"};
  for (const auto& r : reports)
    t.rows.push_back({yes_no(r.delegation), yes_no(r.no_common_auth), std::to_string(r.startds),
                      std::to_string(r.schedd_startd_authentications), std::to_string(r.collector_authentications),
                      std::to_string(r.schedd_authentications), std::to_string(r.startd_authentications),
                      std::to_string(r.contacts_ok), std::to_string(r.contacts_failed),
                      std::to_string(r.contacts_delegated), seconds(r.makespan), fixed(r.turnaround_hz, 3),
                      seconds(r.per_auth_cost), fixed(r.extrapolated_avoided_s, 1)});
  return t;
}

Table tree_table(const harness::TreeReport& r) {
  Table t;
  t.columns = {"fanout", "depth",    "startds",  "sessions", "root", "leaf_mean",
               "leaf_min", "leaf_max", "max_load", "flat_load", "makespan_s"};
  t.rows.push_back({std::to_string(r.fanout), std::to_string(r.depth), std::to_string(r.startds),
                    std::to_string(r.sessions_per_startd), std::to_string(r.root_establishes),
                    fixed(r.leaf_mean, 2), std::to_string(r.leaf_min), std::to_string(r.leaf_max),
                    std::to_string(r.max_load), std::to_string(r.flat_load), seconds(r.makespan)});
  return t;
}

Table tree_detail_table(const harness::TreeReport& r) {
  Table t;
  t.columns = {"collector", "level", "establishes"};
  for (const auto& c : r.collectors)
    t.rows.push_back({c.name, std::to_string(c.level), std::to_string(c.establishes)});
  return t;
}

}  // namespace seslayer::report
