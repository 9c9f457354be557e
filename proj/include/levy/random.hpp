#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace levy {

/// Counter-based generator: draw k of stream `seed` is a pure function of
/// (seed, k), so results do not depend on how work is scheduled.
class CounterRng {
public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

  std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix(key_ + 0x9e3779b97f4a7c15ULL * (counter + 1));
  }

  /// Uniform on (0, 1).
  double uniform(std::uint64_t counter) const noexcept {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on draws 2k and 2k+1.
  double normal(std::uint64_t counter) const noexcept {
    const std::uint64_t pair = counter >> 1;
    const double u1 = uniform(2 * pair);
    const double u2 = uniform(2 * pair + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    return (counter & 1U) ? r * std::sin(a) : r * std::cos(a);
  }

  // splitmix64 finalizer
  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

private:
  std::uint64_t key_;
};

}  // namespace levy
