#ifndef HAPO_ADVANTAGE_HPP_
#define HAPO_ADVANTAGE_HPP_

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "hapo/common.hpp"

namespace hapo {

// Population mean / standard deviation with fixed-order compensated sums.
struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

inline MeanStd population_mean_std(std::span<const double> values) {
  if (values.empty()) throw StatisticsError("mean/std of an empty sequence");
  const double n = static_cast<double>(values.size());
  const double mean = stable_sum(values) / n;
  std::vector<double> squares(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - mean;
    squares[i] = d * d;
  }
  return {mean, std::sqrt(stable_sum(squares) / n)};
}

struct SequenceAdvantage {
  std::vector<double> values;  // one per sequence
  bool degenerate = false;     // zero reward variance; values are all 0
};

// GRPO: (R_i - mean R) / std R within the group; every token of sequence i
// then carries values[i].
inline SequenceAdvantage grpo_sequence_advantage(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ConfigError("group size must be >= 2");
  const MeanStd ms = population_mean_std(rewards);
  SequenceAdvantage out;
  out.values.assign(rewards.size(), 0.0);
  if (!(ms.stddev > 0.0)) {
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out.values[i] = (rewards[i] - ms.mean) / ms.stddev;
  }
  return out;
}

// Per-token advantages of one normalization unit (a group, or a whole batch),
// flattened sequence by sequence.
struct AdvantageView {
  std::vector<double> advantage;              // A
  std::vector<double> redistributed;          // A-hat
  double mu_tok = 0.0;
  double sigma_tok = 1.0;
};

inline std::vector<double> broadcast_to_tokens(std::span<const double> per_sequence,
                                               std::span<const std::size_t> lengths) {
  if (per_sequence.size() != lengths.size()) throw ConfigError("one length per sequence required");
  std::vector<double> out;
  for (std::size_t i = 0; i < lengths.size(); ++i) out.insert(out.end(), lengths[i], per_sequence[i]);
  return out;
}

inline AdvantageView standardize_tokens(std::span<const double> token_values) {
  const MeanStd ms = population_mean_std(token_values);
  if (!(ms.stddev > 0.0)) {
    throw DegenerateGroupError("token rewards have zero variance; filter degenerate groups first");
  }
  AdvantageView view;
  view.mu_tok = ms.mean;
  view.sigma_tok = ms.stddev;
  view.advantage.resize(token_values.size());
  for (std::size_t i = 0; i < token_values.size(); ++i) {
    view.advantage[i] = (token_values[i] - ms.mean) / ms.stddev;
  }
  view.redistributed = view.advantage;
  return view;
}

// Token-level group average: a_{i,t} = r_i, standardized over all tokens of
// the unit jointly.
inline AdvantageView token_level_group_advantage(std::span<const double> rewards,
                                                 std::span<const std::size_t> lengths) {
  for (std::size_t len : lengths) {
    if (len == 0) throw ConfigError("every sequence must be nonempty");
  }
  const std::vector<double> a = broadcast_to_tokens(rewards, lengths);
  return standardize_tokens(a);
}

enum class RedistributionMode { kOff, kBinary, kContinuous };
enum class RedistributionOrder { kPreNorm, kPostNorm };

inline std::string to_string(RedistributionMode m) {
  switch (m) {
    case RedistributionMode::kOff: return "off";
    case RedistributionMode::kBinary: return "binary";
    case RedistributionMode::kContinuous: return "continuous";
  }
  return "?";
}

inline RedistributionMode redistribution_mode_from_string(const std::string& s) {
  if (s == "off") return RedistributionMode::kOff;
  if (s == "binary") return RedistributionMode::kBinary;
  if (s == "continuous") return RedistributionMode::kContinuous;
  throw ConfigError("unknown redistribution mode '" + s + "'");
}

inline std::string to_string(RedistributionOrder o) {
  return o == RedistributionOrder::kPreNorm ? "pre_norm" : "post_norm";
}

inline RedistributionOrder redistribution_order_from_string(const std::string& s) {
  if (s == "pre_norm") return RedistributionOrder::kPreNorm;
  if (s == "post_norm") return RedistributionOrder::kPostNorm;
  throw ConfigError("unknown redistribution order '" + s + "'");
}

struct RedistributionParams {
  RedistributionMode mode = RedistributionMode::kOff;
  RedistributionOrder order = RedistributionOrder::kPostNorm;
  double alpha_high = 1.25;
  double alpha_low = 0.75;
};

inline void validate(const RedistributionParams& p) {
  if (!(p.alpha_high >= 1.0 && p.alpha_low > 0.0 && p.alpha_low <= 1.0)) {
    throw ConfigError("redistribution requires alpha_high >= 1 >= alpha_low > 0");
  }
}

// Ratio interval inside which a token shows no clear update direction.
struct NeutralZone {
  double lower = 1.0;
  double upper = 1.0;

  bool contains(double ratio) const noexcept { return ratio >= lower && ratio <= upper; }
};

inline NeutralZone neutral_zone(double eps_left, double eps_right) noexcept {
  return {1.0 - eps_left / 2.0, 1.0 + eps_right / 2.0};
}

// Redistribution factor for one token. h_tilde > 0 marks a high-entropy
// token (amplified when its ratio leaves the zone); h_tilde <= 0 a
// low-entropy one (modulated while its ratio stays inside).
inline double redistribution_factor(double h_tilde, double ratio, const NeutralZone& zone,
                                    const RedistributionParams& p) {
  const bool high = h_tilde > 0.0;
  const bool condition = high ? !zone.contains(ratio) : zone.contains(ratio);
  switch (p.mode) {
    case RedistributionMode::kOff:
      return 1.0;
    case RedistributionMode::kBinary:
      if (!condition) return 1.0;
      return high ? p.alpha_high : p.alpha_low;
    case RedistributionMode::kContinuous:
      return condition ? 1.0 + h_tilde : 1.0;
  }
  return 1.0;
}

inline std::vector<double> redistribute(std::span<const double> advantage,
                                        std::span<const double> h_tilde,
                                        std::span<const double> ratio,
                                        std::span<const NeutralZone> zones,
                                        const RedistributionParams& p) {
  const std::size_t n = advantage.size();
  if (h_tilde.size() != n || ratio.size() != n || zones.size() != n) {
    throw ConfigError("redistribute inputs must be aligned per token");
  }
  std::vector<double> out(advantage.begin(), advantage.end());
  if (p.mode == RedistributionMode::kOff) return out;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = advantage[i] * redistribution_factor(h_tilde[i], ratio[i], zones[i], p);
  }
  return out;
}

inline void redistribute(AdvantageView& view, std::span<const double> h_tilde,
                         std::span<const double> ratio, std::span<const NeutralZone> zones,
                         const RedistributionParams& p) {
  view.redistributed = redistribute(view.advantage, h_tilde, ratio, zones, p);
}

// Scaling applied to token rewards before standardization. The statistics
// are recomputed over the scaled rewards.
inline AdvantageView redistribute_pre_norm(std::span<const double> rewards,
                                           std::span<const std::size_t> lengths,
                                           std::span<const double> token_scale) {
  std::vector<double> a = broadcast_to_tokens(rewards, lengths);
  if (token_scale.size() != a.size()) throw ConfigError("one scale per token required");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= token_scale[i];
  return standardize_tokens(a);
}

// Scaling applied after standardization: A-hat = A * scale, mu/sigma untouched.
inline AdvantageView redistribute_post_norm(std::span<const double> rewards,
                                            std::span<const std::size_t> lengths,
                                            std::span<const double> token_scale) {
  AdvantageView view = token_level_group_advantage(rewards, lengths);
  if (token_scale.size() != view.advantage.size()) {
    throw ConfigError("one scale per token required");
  }
  for (std::size_t i = 0; i < view.advantage.size(); ++i) {
    view.redistributed[i] = view.advantage[i] * token_scale[i];
  }
  return view;
}

struct AdvantageSummary {
  double mean = 0.0;
  double max = 0.0;
  double min = 0.0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

inline AdvantageSummary summarize(std::span<const double> values) {
  AdvantageSummary s;
  if (values.empty()) return s;
  s.mean = stable_sum(values) / static_cast<double>(values.size());
  s.max = values[0];
  s.min = values[0];
  for (double v : values) {
    s.max = std::max(s.max, v);
    s.min = std::min(s.min, v);
    if (v > 0.0) ++s.positive;
    if (v < 0.0) ++s.negative;
  }
  return s;
}

}  // namespace hapo

#endif  // HAPO_ADVANTAGE_HPP_
