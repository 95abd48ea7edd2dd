#pragma once

#include <cmath>
#include <cstdint>

namespace dealab {

/// Counter-based generator: every draw is a pure function of (key, stream, counter),
/// so any sample can be regenerated without replaying the ones before it.
/// The mixing function is SplitMix64.
class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t key, std::uint64_t stream = 0) noexcept
      : key_(mix(key ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

  [[nodiscard]] constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix(key_ + (counter + 1) * 0x9e3779b97f4a7c15ULL);
  }

  /// Uniform in the open interval (0, 1).
  [[nodiscard]] double uniform(std::uint64_t counter) const noexcept {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on counters (2c, 2c+1).
  [[nodiscard]] double normal(std::uint64_t counter) const noexcept {
    const double u1 = uniform(2 * counter);
    const double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t key_;
};

/// Named streams. Keep these stable: changing a value changes every recorded run.
namespace rng_stream {
inline constexpr std::uint64_t kFailure = 1;
inline constexpr std::uint64_t kDisplacementNoise = 2;
inline constexpr std::uint64_t kForceNoise = 3;
inline constexpr std::uint64_t kCurrentNoise = 4;
}  // namespace rng_stream

/// Derives a child seed from a parent seed and a list of integer tags.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept {
  return CounterRng::mix(parent * 0x9e3779b97f4a7c15ULL ^ CounterRng::mix(tag + 0x5851f42d4c957f2dULL));
}

}  // namespace dealab
