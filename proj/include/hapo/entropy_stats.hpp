#ifndef HAPO_ENTROPY_STATS_HPP_
#define HAPO_ENTROPY_STATS_HPP_

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "hapo/common.hpp"

namespace hapo {

inline constexpr double kEntropyFloor = 1e-6;

inline double floored_log_entropy(double entropy, double floor = kEntropyFloor) {
  return std::log(std::max(entropy, floor));
}

// Batch statistics of log-entropy. sigma is the RMS deviation around the
// quantile Q (not around the mean).
struct EntropyStats {
  double quantile = 0.0;  // Q_rho(log H)
  double sigma = 1.0;
  double h_max = 0.0;     // max standardized h over h > 0, or 0 if none
  double h_min = 0.0;     // min standardized h over h < 0, or 0 if none
  double rho = 80.0;
  bool degenerate = false;  // sigma was 0 and has been replaced by 1
};

struct ScaledEntropy {
  double h = 0.0;
  double h_tilde = 0.0;
};

inline EntropyStats batch_stats(std::span<const double> entropies, double rho,
                                double floor = kEntropyFloor) {
  if (entropies.empty()) throw StatisticsError("entropy statistics of an empty batch");
  if (!(rho >= 0.0 && rho <= 100.0)) throw StatisticsError("rho must lie in [0, 100]");
  std::vector<double> logs;
  logs.reserve(entropies.size());
  for (double e : entropies) {
    if (!std::isfinite(e) || e < 0.0) throw StatisticsError("entropy must be finite and >= 0");
    logs.push_back(floored_log_entropy(e, floor));
  }
  // Sorting first makes every reduction below independent of input order.
  std::sort(logs.begin(), logs.end());

  EntropyStats stats;
  stats.rho = rho;
  stats.quantile = percentile_sorted(logs, rho);
  std::vector<double> squares(logs.size());
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const double d = logs[i] - stats.quantile;
    squares[i] = d * d;
  }
  stats.sigma = std::sqrt(stable_sum(squares) / static_cast<double>(logs.size()));
  if (!(stats.sigma > 0.0)) {
    stats.sigma = 1.0;
    stats.degenerate = true;
  }
  const double h_hi = (logs.back() - stats.quantile) / stats.sigma;
  const double h_lo = (logs.front() - stats.quantile) / stats.sigma;
  stats.h_max = h_hi > 0.0 ? h_hi : 0.0;
  stats.h_min = h_lo < 0.0 ? h_lo : 0.0;
  return stats;
}

// Asymmetric scaling into [-1, 1]: positive h is divided by h_max, negative h
// by |h_min|, so the batch extremes map to exactly +1 and -1 and sign is kept.
inline ScaledEntropy scale(double log_entropy, const EntropyStats& stats) {
  ScaledEntropy s;
  s.h = (log_entropy - stats.quantile) / stats.sigma;
  if (s.h > 0.0) {
    s.h_tilde = stats.h_max > 0.0 ? std::min(s.h / stats.h_max, 1.0) : 0.0;
  } else {
    s.h_tilde = stats.h_min < 0.0 ? std::max(s.h / -stats.h_min, -1.0) : 0.0;
  }
  return s;
}

inline ScaledEntropy scale_entropy(double entropy, const EntropyStats& stats,
                                   double floor = kEntropyFloor) {
  return scale(floored_log_entropy(entropy, floor), stats);
}

// Quantile and deviation handed from one step's training batch to the next
// step's temperature schedule.
struct EntropyPrior {
  double quantile = 0.0;
  double sigma = 1.0;

  bool operator==(const EntropyPrior&) const = default;
};

inline EntropyPrior carryover(const EntropyStats& stats) {
  return {stats.quantile, stats.sigma};
}

}  // namespace hapo

#endif  // HAPO_ENTROPY_STATS_HPP_
