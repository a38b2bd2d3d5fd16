#pragma once

#include <array>
#include <cstdint>
#include <mutex>
#include <span>

#include "seslayer/bytes.hpp"

namespace seslayer {

class RandomSource {
 public:
  virtual ~RandomSource() = default;
  // Throws Error(kCryptoFailure) if randomness is unavailable.
  virtual void fill(std::span<std::uint8_t> out) = 0;

  Bytes bytes(std::size_t n) {
    Bytes b(n);
    fill(b);
    return b;
  }
  std::uint64_t next_u64();
};

// Operating-system entropy via the crypto provider.
class SystemRandom final : public RandomSource {
 public:
  void fill(std::span<std::uint8_t> out) override;
};

// Reproducible stream for tests and simulation: HMAC-SHA256 in counter mode
// keyed by the seed. Not for production keys.
class SeededRandom final : public RandomSource {
 public:
  explicit SeededRandom(std::uint64_t seed);
  void fill(std::span<std::uint8_t> out) override;

 private:
  std::mutex mu_;
  std::array<std::uint8_t, 32> key_{};
  std::uint64_t counter_ = 0;
  std::array<std::uint8_t, 32> block_{};
  std::size_t used_ = 32;
};

}  // namespace seslayer
