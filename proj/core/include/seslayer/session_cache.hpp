#pragma once

// Per-daemon session store. Thread-safe; every lookup checks expiry against
// the injected clock, so an expired session is never handed out.

#include <cstddef>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "seslayer/session.hpp"

namespace seslayer::session {

// Which end of the session this daemon holds. Only client-side sessions are
// used to initiate commands toward their origin.
enum class SessionRole { Client, Server };

class SessionCache {
 public:
  // `capacity` 0 means unbounded; otherwise inserting beyond it evicts the
  // session closest to expiry.
  explicit SessionCache(const Clock& clock, std::size_t capacity = 0);

  void insert(Session s, SessionRole role);
  std::optional<Session> lookup(std::string_view id);
  // Most recently established client-side session toward `peer` that is valid
  // for `level`.
  std::optional<Session> find_for_peer(const Address& peer, CommandLevel level);
  // Idempotent.
  bool evict(std::string_view id);
  // Removes sessions whose expiry is at or before `now`. Returns the count.
  std::size_t sweep(Micros now);
  std::size_t sweep() { return sweep(clock_.now()); }
  void clear();

  // Replay guard: false if `nonce` was already used with session `id` or the
  // session is unknown. Remembers the most recent kMaxNoncesPerSession nonces.
  bool note_nonce(std::string_view id, ByteView nonce);

  std::size_t size() const;
  std::vector<std::string> ids() const;
  const Clock& clock() const { return clock_; }

 static constexpr std::size_t kMaxNoncesPerSession = 4096;

 private:
  struct Entry {
    Session session;
    SessionRole role;
    std::set<Bytes> nonces;
    std::deque<Bytes> nonce_order;
  };
  void evict_locked(std::string_view id);

  const Clock& clock_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::map<std::string, Entry, std::less<>> entries_;
};

// Unwraps a delegation token received over `carrier` and caches the session
// as a client-side session toward its origin.
Session import_token(ByteView token, const Session& carrier, SessionCache& cache);

}  // namespace seslayer::session
