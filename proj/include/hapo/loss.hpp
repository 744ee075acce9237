#ifndef HAPO_LOSS_HPP_
#define HAPO_LOSS_HPP_

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "hapo/common.hpp"

namespace hapo {

enum class Algorithm { kGrpo, kDapo, kDapoFork, kHapo };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kGrpo: return "grpo";
    case Algorithm::kDapo: return "dapo";
    case Algorithm::kDapoFork: return "dapo_fork";
    case Algorithm::kHapo: return "hapo";
  }
  return "?";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "grpo") return Algorithm::kGrpo;
  if (s == "dapo") return Algorithm::kDapo;
  if (s == "dapo_fork") return Algorithm::kDapoFork;
  if (s == "hapo") return Algorithm::kHapo;
  throw ConfigError("unknown algorithm '" + s + "'");
}

enum class ClipMode { kUniform, kBinary, kContinuous };

inline std::string to_string(ClipMode m) {
  switch (m) {
    case ClipMode::kUniform: return "uniform";
    case ClipMode::kBinary: return "binary";
    case ClipMode::kContinuous: return "continuous";
  }
  return "?";
}

inline ClipMode clip_mode_from_string(const std::string& s) {
  if (s == "uniform") return ClipMode::kUniform;
  if (s == "binary") return ClipMode::kBinary;
  if (s == "continuous") return ClipMode::kContinuous;
  throw ConfigError("unknown clip mode '" + s + "'");
}

// Clipping configuration. `uniform` applies the base pair to every token
// (DAPO clip-higher with the defaults); `binary` switches between the
// high/low-entropy pairs on the sign of h-tilde; `continuous` scales the
// base pair by h-tilde.
struct ClipBounds {
  ClipMode mode = ClipMode::kUniform;
  double eps_left_base = 0.2;
  double eps_right_base = 0.28;
  double eps_left_high = 0.2;   // binary, high-entropy tokens
  double eps_right_high = 0.35;
  double eps_left_low = 0.35;   // binary, low-entropy tokens
  double eps_right_low = 0.2;
  double eps_left_cap = 0.95;
};

inline void validate(const ClipBounds& b) {
  auto check_left = [](double e, const char* name) {
    if (!(e > 0.0 && e < 1.0)) throw ConfigError(std::string(name) + " must lie in (0, 1)");
  };
  auto check_right = [](double e, const char* name) {
    if (!(e > 0.0)) throw ConfigError(std::string(name) + " must be > 0");
  };
  check_left(b.eps_left_base, "clip.eps_left_base");
  check_left(b.eps_left_high, "clip.eps_left_high");
  check_left(b.eps_left_low, "clip.eps_left_low");
  check_left(b.eps_left_cap, "clip.eps_left_cap");
  check_right(b.eps_right_base, "clip.eps_right_base");
  check_right(b.eps_right_high, "clip.eps_right_high");
  check_right(b.eps_right_low, "clip.eps_right_low");
}

struct TokenBounds {
  double eps_left = 0.2;
  double eps_right = 0.28;

  double lower() const noexcept { return 1.0 - eps_left; }
  double upper() const noexcept { return 1.0 + eps_right; }
};

inline TokenBounds clip_bounds(double h_tilde, const ClipBounds& base) {
  switch (base.mode) {
    case ClipMode::kUniform:
      return {base.eps_left_base, base.eps_right_base};
    case ClipMode::kBinary:
      return h_tilde > 0.0 ? TokenBounds{base.eps_left_high, base.eps_right_high}
                           : TokenBounds{base.eps_left_low, base.eps_right_low};
    case ClipMode::kContinuous:
      if (h_tilde > 0.0) return {base.eps_left_base, base.eps_right_base * (1.0 + h_tilde)};
      return {std::min(base.eps_left_base * (1.0 - h_tilde), base.eps_left_cap),
              base.eps_right_base};
  }
  return {base.eps_left_base, base.eps_right_base};
}

struct TokenUpdateState {
  double ratio = 1.0;
  double advantage = 0.0;
  bool clipped_left = false;
  bool clipped_right = false;
};

struct SurrogateTerm {
  double value = 0.0;
  // d value / d ratio: the advantage when the unclipped branch is selected,
  // 0 when the clipped branch wins the min.
  double ratio_grad = 0.0;
  bool clipped_left = false;
  bool clipped_right = false;
};

// min(r * A, clip(r, 1 - eps_left, 1 + eps_right) * A).
inline SurrogateTerm token_surrogate(double ratio, double advantage, double eps_left,
                                     double eps_right) {
  const double lo = 1.0 - eps_left;
  const double hi = 1.0 + eps_right;
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, lo, hi) * advantage;
  SurrogateTerm t;
  if (clipped < unclipped) {
    t.value = clipped;
    t.ratio_grad = 0.0;
    t.clipped_left = ratio < lo;
    t.clipped_right = ratio > hi;
  } else {
    t.value = unclipped;
    t.ratio_grad = advantage;
  }
  return t;
}

// Forking-token mask (active for the dapo_fork algorithm).
struct ForkingMaskParams {
  double rho = 80.0;
  // Masked-out tokens are dropped from the token-mean denominator when true;
  // when false the denominator still counts every token.
  bool exclude_masked_from_denominator = true;
};

inline void validate(const ForkingMaskParams& p) {
  if (!(p.rho >= 0.0 && p.rho < 100.0)) throw ConfigError("fork.rho must lie in [0, 100)");
}

// Keeps tokens with H >= tau, where tau is the upper rank threshold: exactly
// ceil((100 - rho)/100 * N) tokens pass when entropies are distinct, and ties
// at tau all pass.
inline std::vector<bool> forking_mask(std::span<const double> entropies,
                                      const ForkingMaskParams& p) {
  if (entropies.empty()) throw StatisticsError("forking mask of an empty batch");
  const std::size_t n = entropies.size();
  std::vector<double> sorted(entropies.begin(), entropies.end());
  std::sort(sorted.begin(), sorted.end());
  const double keep_real = std::ceil((100.0 - p.rho) * static_cast<double>(n) / 100.0);
  const std::size_t keep = std::clamp<std::size_t>(static_cast<std::size_t>(keep_real), 1, n);
  const double tau = sorted[n - keep];
  std::vector<bool> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = entropies[i] >= tau;
  return mask;
}

// Token weights w such that batch loss = sum_t w_t * value_t.
//   grpo:       1 / (G * |o_i|)        mean of per-sequence token means
//   dapo/hapo:  1 / sum_i |o_i|        token mean
//   dapo_fork:  token mean over unmasked tokens, masked tokens weigh 0
inline std::vector<double> token_weights(Algorithm algo, std::span<const std::size_t> lengths,
                                         const std::vector<bool>& mask = {},
                                         bool exclude_masked_from_denominator = true) {
  std::size_t total = 0;
  for (std::size_t len : lengths) total += len;
  if (lengths.empty() || total == 0) throw TrainingError("loss over an empty batch");
  std::vector<double> w;
  w.reserve(total);
  if (algo == Algorithm::kGrpo) {
    const double groups = static_cast<double>(lengths.size());
    for (std::size_t len : lengths) {
      if (len == 0) throw TrainingError("empty sequence in batch");
      w.insert(w.end(), len, 1.0 / (groups * static_cast<double>(len)));
    }
    return w;
  }
  if (algo == Algorithm::kDapoFork && !mask.empty()) {
    if (mask.size() != total) throw ConfigError("mask must cover every token");
    const auto kept = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    if (kept == 0) throw TrainingError("every token is masked; empty loss denominator");
    const double denom = static_cast<double>(exclude_masked_from_denominator ? kept : total);
    for (bool m : mask) w.push_back(m ? 1.0 / denom : 0.0);
    return w;
  }
  w.assign(total, 1.0 / static_cast<double>(total));
  return w;
}

inline double batch_loss(Algorithm algo, std::span<const double> values,
                         std::span<const std::size_t> lengths, const std::vector<bool>& mask = {},
                         bool exclude_masked_from_denominator = true) {
  const std::vector<double> w =
      token_weights(algo, lengths, mask, exclude_masked_from_denominator);
  if (w.size() != values.size()) throw ConfigError("one value per token required");
  std::vector<double> terms(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) terms[i] = w[i] == 0.0 ? 0.0 : w[i] * values[i];
  return stable_sum(terms);
}

}  // namespace hapo

#endif  // HAPO_LOSS_HPP_
