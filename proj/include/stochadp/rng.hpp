#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, path, step, stream, channel), so Monte Carlo paths are
// reproducible and independent of the order in which they are simulated.
//
// Philox4x32-10: Salmon, Moraes, Dror, Shaw, "Parallel random numbers:
// as easy as 1, 2, 3", SC 2011.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace stochadp {

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

inline Philox4x32Counter philox4x32_10(Philox4x32Counter ctr,
                                       Philox4x32Key key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

/// SplitMix64 finalizer; used to derive child seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Deterministic child seed for sub-experiment `index` under `tag`.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag,
                                    std::uint64_t index = 0) {
  return mix64(mix64(parent ^ mix64(tag)) + index);
}

/// Independent stream identifiers inside one (seed, path) pair.
enum class Stream : std::uint16_t {
  kBrownianState = 1,    // dw1 increments
  kBrownianControl = 2,  // dw2 increments
  kInitialState = 3,
  kDither = 4,
  kPerturbation = 5,
  kGeneric = 6,
};

/// Maps 64 random bits to (0, 1].
inline double to_unit_open_closed(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

/// Standard normal draws addressed by coordinates rather than by sequence
/// position.
class CounterNormal {
 public:
  explicit CounterNormal(std::uint64_t seed)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)} {}

  /// Two independent N(0,1) values for block `block` of the given stream.
  std::array<double, 2> pair(std::uint32_t path, std::uint64_t step,
                             Stream stream, std::uint32_t block) const {
    const Philox4x32Counter ctr{
        static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
        path,
        (static_cast<std::uint32_t>(stream) << 24) | (block & 0xFFFFFFu)};
    const auto r = philox4x32_10(ctr, key_);
    const std::uint64_t a = (std::uint64_t{r[0]} << 32) | r[1];
    const std::uint64_t b = (std::uint64_t{r[2]} << 32) | r[3];
    const double radius = std::sqrt(-2.0 * std::log(to_unit_open_closed(a)));
    const double angle = 2.0 * std::numbers::pi * to_unit_open_closed(b);
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  /// N(0,1) for scalar channel `channel`.
  double normal(std::uint32_t path, std::uint64_t step, Stream stream,
                std::uint32_t channel) const {
    const auto p = pair(path, step, stream, channel / 2);
    return p[channel % 2];
  }

 private:
  Philox4x32Key key_;
};

/// Sequential engine over one Philox stream; satisfies
/// UniformRandomBitGenerator so it plugs into <random> distributions.
class PhiloxEngine {
 public:
  using result_type = std::uint32_t;

  explicit PhiloxEngine(std::uint64_t seed, std::uint32_t stream_id = 0)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        stream_id_(stream_id) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    if (lane_ == 4) {
      buffer_ = philox4x32_10({static_cast<std::uint32_t>(counter_),
                               static_cast<std::uint32_t>(counter_ >> 32),
                               stream_id_, 0x5EEDu},
                              key_);
      ++counter_;
      lane_ = 0;
    }
    return buffer_[lane_++];
  }

  double uniform() {
    const std::uint64_t hi = (*this)();
    const std::uint64_t lo = (*this)();
    return to_unit_open_closed((hi << 32) | lo);
  }

  double normal() {
    const double radius = std::sqrt(-2.0 * std::log(uniform()));
    return radius * std::cos(2.0 * std::numbers::pi * uniform());
  }

 private:
  Philox4x32Key key_;
  std::uint32_t stream_id_;
  std::uint64_t counter_ = 0;
  Philox4x32Counter buffer_{};
  int lane_ = 4;
};

}  // namespace stochadp
