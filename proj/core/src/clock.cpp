#include "seslayer/clock.hpp"

namespace seslayer {

Micros SteadyClock::now() const {
  return std::chrono::duration_cast<Micros>(std::chrono::steady_clock::now().time_since_epoch());
}

}  // namespace seslayer
