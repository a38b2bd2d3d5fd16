#include "seslayer/ledger.hpp"

namespace seslayer {

LedgerCounters& LedgerCounters::operator+=(const LedgerCounters& o) {
  messages_sent += o.messages_sent;
  bytes_sent += o.bytes_sent;
  round_trips += o.round_trips;
  authentications += o.authentications;
  establishes_served += o.establishes_served;
  wall_time += o.wall_time;
  return *this;
}

namespace context {
namespace {
struct ThreadContext {
  std::string node = "local";
  std::vector<std::string> ops;
};
thread_local ThreadContext tls;
const std::string kUnscoped(kUnscopedOp);
}  // namespace

const std::string& node() { return tls.node; }
void set_node(std::string node) { tls.node = std::move(node); }
const std::string& op() { return tls.ops.empty() ? kUnscoped : tls.ops.back(); }

void push_op(std::string op) { tls.ops.push_back(std::move(op)); }
void pop_op() {
  if (!tls.ops.empty()) tls.ops.pop_back();
}
}  // namespace context

LedgerCounters& RoundTripLedger::slot(std::string_view node, std::string_view op) {
  return counters_[Key{std::string(node), std::string(op)}];
}

void RoundTripLedger::record_message(std::string_view node, std::string_view op, std::size_t bytes) {
  std::lock_guard lk(mu_);
  auto& c = slot(node, op);
  c.messages_sent += 1;
  c.bytes_sent += bytes;
}

void RoundTripLedger::record_round_trip(std::string_view node, std::string_view op) {
  std::lock_guard lk(mu_);
  slot(node, op).round_trips += 1;
}

void RoundTripLedger::record_authentication(std::string_view node, std::string_view peer,
                                            std::string_view op) {
  std::lock_guard lk(mu_);
  slot(node, op).authentications += 1;
  auth_pairs_[Key{std::string(node), std::string(peer)}] += 1;
}

void RoundTripLedger::record_establish_served(std::string_view node) {
  std::lock_guard lk(mu_);
  slot(node, "establish").establishes_served += 1;
}

void RoundTripLedger::add_wall_time(std::string_view node, std::string_view op, Micros t) {
  std::lock_guard lk(mu_);
  slot(node, op).wall_time += t;
}

LedgerCounters RoundTripLedger::get(std::string_view node, std::string_view op) const {
  std::lock_guard lk(mu_);
  auto it = counters_.find(Key{std::string(node), std::string(op)});
  return it == counters_.end() ? LedgerCounters{} : it->second;
}

LedgerCounters RoundTripLedger::node_total(std::string_view node) const {
  std::lock_guard lk(mu_);
  LedgerCounters sum;
  for (const auto& [k, c] : counters_)
    if (k.first == node) sum += c;
  return sum;
}

LedgerCounters RoundTripLedger::op_total(std::string_view op) const {
  std::lock_guard lk(mu_);
  LedgerCounters sum;
  for (const auto& [k, c] : counters_)
    if (k.second == op) sum += c;
  return sum;
}

LedgerCounters RoundTripLedger::total() const {
  std::lock_guard lk(mu_);
  LedgerCounters sum;
  for (const auto& [k, c] : counters_) sum += c;
  return sum;
}

std::uint64_t RoundTripLedger::authentications_between(std::string_view node,
                                                       std::string_view peer) const {
  std::lock_guard lk(mu_);
  auto it = auth_pairs_.find(Key{std::string(node), std::string(peer)});
  return it == auth_pairs_.end() ? 0 : it->second;
}

std::uint64_t RoundTripLedger::authentications_with_prefix(std::string_view node,
                                                           std::string_view peer_prefix) const {
  std::lock_guard lk(mu_);
  std::uint64_t n = 0;
  for (const auto& [k, c] : auth_pairs_)
    if (k.first == node && k.second.starts_with(peer_prefix)) n += c;
  return n;
}

std::vector<std::string> RoundTripLedger::nodes() const {
  std::lock_guard lk(mu_);
  std::vector<std::string> out;
  for (const auto& [k, c] : counters_)
    if (out.empty() || out.back() != k.first) out.push_back(k.first);
  return out;
}

void RoundTripLedger::reset() {
  std::lock_guard lk(mu_);
  counters_.clear();
  auth_pairs_.clear();
}

OpScope::OpScope(RoundTripLedger& ledger, const Clock& clock, std::string op)
    : ledger_(ledger), clock_(clock), op_(std::move(op)), start_(clock.now()) {
  context::push_op(op_);
}

OpScope::~OpScope() {
  context::pop_op();
  ledger_.add_wall_time(context::node(), op_, clock_.now() - start_);
}

Micros OpScope::elapsed() const { return clock_.now() - start_; }

}  // namespace seslayer
