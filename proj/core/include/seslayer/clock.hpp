#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <stdexcept>

namespace seslayer {

using Micros = std::chrono::microseconds;
using Millis = std::chrono::milliseconds;

// Injectable time source. All expiry and deadline logic reads time through a
// Clock so tests and the simulator control it.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual Micros now() const = 0;
};

class SteadyClock final : public Clock {
 public:
  Micros now() const override;
};

// Test clock that only moves when told to.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Micros start = Micros{0}) : now_(start.count()) {}
  Micros now() const override { return Micros{now_.load()}; }
  void set(Micros t) { now_.store(t.count()); }
  void advance(Micros d) { now_.fetch_add(d.count()); }

 private:
  std::atomic<std::int64_t> now_;
};

// Per-operation timeout. Always finite and positive: there is no way to
// express "wait forever".
class Deadline {
 public:
  explicit Deadline(Millis timeout) : timeout_(timeout) {
    if (timeout.count() <= 0) throw std::invalid_argument("deadline must be positive");
  }
  static Deadline ms(std::int64_t n) { return Deadline(Millis{n}); }
  static Deadline seconds(std::int64_t n) { return Deadline(Millis{n * 1000}); }

  Millis timeout() const { return timeout_; }
  Micros expiry_from(Micros now) const { return now + std::chrono::duration_cast<Micros>(timeout_); }

 private:
  Millis timeout_;
};

}  // namespace seslayer
