#ifndef HAPO_COMMON_HPP_
#define HAPO_COMMON_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hapo {

using TokenId = std::int32_t;

// Error taxonomy. Each maps onto one CLI exit code (config -> 2, the rest -> 3).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StatisticsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateGroupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// SplitMix64 finalizer; used for seed derivation and feature hashing.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a tag path,
// e.g. derive_seed(run_seed, {kRollout, step, prompt, seq}).
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t h = mix64(base);
  for (std::uint64_t t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

// Portable [0,1) draw with 53 random bits. std::uniform_real_distribution is
// implementation-defined, which would break cross-toolchain replay.
template <typename Engine>
double uniform01(Engine& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

// Fixed-order Neumaier summation; results do not depend on how the caller
// batches work, only on element order.
inline double stable_sum(std::span<const double> values) noexcept {
  double sum = 0.0;
  double comp = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

// Linear-interpolation percentile between order statistics (numpy "linear").
// `sorted` must be ascending and nonempty; percent in [0, 100].
inline double percentile_sorted(std::span<const double> sorted, double percent) {
  if (sorted.empty()) throw StatisticsError("percentile of empty sequence");
  if (!(percent >= 0.0 && percent <= 100.0)) {
    throw StatisticsError("percentile outside [0, 100]: " + std::to_string(percent));
  }
  const double pos = percent / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

inline bool all_finite(std::span<const double> values) noexcept {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace hapo

#endif  // HAPO_COMMON_HPP_
