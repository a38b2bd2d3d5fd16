#include "seslayer/session_cache.hpp"

#include <algorithm>

namespace seslayer::session {

SessionCache::SessionCache(const Clock& clock, std::size_t capacity) : clock_(clock), capacity_(capacity) {}

void SessionCache::insert(Session s, SessionRole role) {
  std::lock_guard lk(mu_);
  auto id = s.session_id;
  entries_.insert_or_assign(id, Entry{std::move(s), role, {}, {}});
  if (capacity_ == 0) return;
  while (entries_.size() > capacity_) {
    auto victim = std::min_element(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) {
      return a.second.session.expires_at() < b.second.session.expires_at();
    });
    entries_.erase(victim);
  }
}

std::optional<Session> SessionCache::lookup(std::string_view id) {
  std::lock_guard lk(mu_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  if (it->second.session.expired(clock_.now())) {
    entries_.erase(it);
    return std::nullopt;
  }
  return it->second.session;
}

std::optional<Session> SessionCache::find_for_peer(const Address& peer, CommandLevel level) {
  std::lock_guard lk(mu_);
  const Micros now = clock_.now();
  const Session* best = nullptr;
  for (auto it = entries_.begin(); it != entries_.end();) {
    const auto& e = it->second;
    if (e.session.expired(now)) {
      it = entries_.erase(it);
      continue;
    }
    if (e.role == SessionRole::Client && e.session.origin == peer && e.session.valid_for(level) &&
        (!best || e.session.established_at > best->established_at))
      best = &e.session;
    ++it;
  }
  if (!best) return std::nullopt;
  return *best;
}

void SessionCache::evict_locked(std::string_view id) {
  auto it = entries_.find(id);
  if (it != entries_.end()) entries_.erase(it);
}

bool SessionCache::evict(std::string_view id) {
  std::lock_guard lk(mu_);
  auto before = entries_.size();
  evict_locked(id);
  return entries_.size() != before;
}

std::size_t SessionCache::sweep(Micros now) {
  std::lock_guard lk(mu_);
  return std::erase_if(entries_, [&](const auto& kv) { return kv.second.session.expires_at() <= now; });
}

void SessionCache::clear() {
  std::lock_guard lk(mu_);
  entries_.clear();
}

bool SessionCache::note_nonce(std::string_view id, ByteView nonce) {
  std::lock_guard lk(mu_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return false;
  auto& e = it->second;
  Bytes n(nonce.begin(), nonce.end());
  if (!e.nonces.insert(n).second) return false;
  e.nonce_order.push_back(std::move(n));
  if (e.nonce_order.size() > kMaxNoncesPerSession) {
    e.nonces.erase(e.nonce_order.front());
    e.nonce_order.pop_front();
  }
  return true;
}

std::size_t SessionCache::size() const {
  std::lock_guard lk(mu_);
  return entries_.size();
}

std::vector<std::string> SessionCache::ids() const {
  std::lock_guard lk(mu_);
  std::vector<std::string> out;
  for (const auto& [id, e] : entries_) out.push_back(id);
  return out;
}

Session import_token(ByteView token, const Session& carrier, SessionCache& cache) {
  auto s = unwrap_token(token, carrier, cache.clock().now());
  cache.insert(s, SessionRole::Client);
  return s;
}

}  // namespace seslayer::session
