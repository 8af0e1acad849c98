#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace cag {

/// SplitMix64 finalizer (Steele, Lea, Flood 2014).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Counter-based generator. The n-th draw of stream `s` under seed `k` is
///
///   key  = splitmix64(k ^ splitmix64(s))
///   u64  = splitmix64(key + n * 0x9E3779B97F4A7C15)
///
/// so any draw can be reproduced from (seed, stream, counter) alone, in any
/// language. Uniform doubles take the top 53 bits; normals use Box-Muller on
/// two consecutive draws and return the cosine branch only.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(splitmix64(seed ^ splitmix64(stream))) {}

  std::uint64_t at(std::uint64_t counter) const noexcept {
    return splitmix64(key_ + counter * 0x9E3779B97F4A7C15ull);
  }

  std::uint64_t next_u64() noexcept { return at(counter_++); }

  /// Uniform in [0, 1).
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  /// Uniform integer in [0, n). Uses rejection to stay unbiased.
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Standard normal.
  double normal() noexcept;

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// In-place Fisher-Yates shuffle driven by `rng`.
template <typename T>
void shuffle(std::span<T> items, CounterRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

/// Derive a sub-seed for a named purpose so unrelated random streams never
/// share draws.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  return splitmix64(seed * 0xD1B54A32D192ED03ull + splitmix64(tag));
}

}  // namespace cag
