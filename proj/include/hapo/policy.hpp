#ifndef HAPO_POLICY_HPP_
#define HAPO_POLICY_HPP_

// Linear-softmax policy over hashed context features.
//
// The context is the concatenation prompt ++ response-prefix. For every n in
// 1..window the last n tokens (left-padded with a sentinel) are hashed,
// optionally together with the response position and a digest of the prompt,
// into one of `buckets` indicator features. Logits are z = W^T phi, so the
// log-probability gradient is closed form:
//   d log pi(a) / d W[f, k] = phi_f * (1[k == a] - pi(k)) / T.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hapo/common.hpp"

namespace hapo {

struct FeatureSpec {
  int window = 3;
  int buckets = 4096;
  bool use_position = true;
  bool condition_on_prompt = true;

  bool operator==(const FeatureSpec&) const = default;
};

inline void validate(const FeatureSpec& spec) {
  if (spec.window < 1) throw ConfigError("feature window must be >= 1");
  if (spec.buckets < 1) throw ConfigError("feature buckets must be >= 1");
}

// Sparse 0/1 indicator vector: sorted, duplicate-free active bucket indices.
struct ContextFeatures {
  std::vector<std::uint32_t> active;

  bool operator==(const ContextFeatures&) const = default;
};

inline std::uint64_t prompt_digest(std::span<const TokenId> prompt) noexcept {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (TokenId t : prompt) h = mix64(h ^ static_cast<std::uint64_t>(t + 1));
  return h;
}

inline ContextFeatures featurize(const FeatureSpec& spec, std::span<const TokenId> prompt,
                                 std::span<const TokenId> response_prefix) {
  constexpr std::uint64_t kPad = 0xfffffULL;
  const std::uint64_t digest = spec.condition_on_prompt ? prompt_digest(prompt) : 0ULL;
  const std::uint64_t position = spec.use_position ? response_prefix.size() + 1 : 0ULL;
  const std::size_t context_len = prompt.size() + response_prefix.size();
  auto token_at_back = [&](std::size_t k) -> std::uint64_t {
    // k = 0 is the most recent token.
    if (k >= context_len) return kPad;
    const std::size_t idx = context_len - 1 - k;
    const TokenId t = idx < prompt.size() ? prompt[idx] : response_prefix[idx - prompt.size()];
    return static_cast<std::uint64_t>(t);
  };

  ContextFeatures features;
  features.active.reserve(static_cast<std::size_t>(spec.window));
  std::uint64_t h = mix64(digest ^ mix64(position));
  for (int n = 1; n <= spec.window; ++n) {
    h = mix64(h ^ (token_at_back(static_cast<std::size_t>(n - 1)) + 0x9e37ULL * n));
    features.active.push_back(
        static_cast<std::uint32_t>(h % static_cast<std::uint64_t>(spec.buckets)));
  }
  std::sort(features.active.begin(), features.active.end());
  features.active.erase(std::unique(features.active.begin(), features.active.end()),
                        features.active.end());
  return features;
}

class PolicyParams {
 public:
  PolicyParams() = default;
  PolicyParams(FeatureSpec features, int vocab_size)
      : features_(features), vocab_size_(vocab_size) {
    validate(features_);
    if (vocab_size_ < 2) throw ConfigError("vocab_size must be >= 2");
    weights_.assign(static_cast<std::size_t>(features_.buckets) *
                        static_cast<std::size_t>(vocab_size_),
                    0.0);
  }

  const FeatureSpec& feature_spec() const noexcept { return features_; }
  int vocab_size() const noexcept { return vocab_size_; }
  int feature_dim() const noexcept { return features_.buckets; }

  std::span<const double> weights() const noexcept { return weights_; }
  std::span<double> weights() noexcept { return weights_; }

  std::span<const double> row(std::uint32_t feature) const {
    return std::span<const double>(weights_).subspan(
        static_cast<std::size_t>(feature) * vocab_size_, static_cast<std::size_t>(vocab_size_));
  }
  std::span<double> row(std::uint32_t feature) {
    return std::span<double>(weights_).subspan(static_cast<std::size_t>(feature) * vocab_size_,
                                               static_cast<std::size_t>(vocab_size_));
  }

  bool operator==(const PolicyParams&) const = default;

 private:
  FeatureSpec features_;
  int vocab_size_ = 0;
  std::vector<double> weights_;  // row-major [buckets x vocab]
};

// Frozen copy of the parameters used at rollout time (pi_old).
class PolicySnapshot {
 public:
  explicit PolicySnapshot(const PolicyParams& params)
      : params_(std::make_shared<const PolicyParams>(params)) {}

  const PolicyParams& params() const noexcept { return *params_; }

 private:
  std::shared_ptr<const PolicyParams> params_;
};

inline PolicySnapshot snapshot(const PolicyParams& params) { return PolicySnapshot(params); }

inline void check_features(const PolicyParams& params, const ContextFeatures& ctx) {
  for (std::uint32_t f : ctx.active) {
    if (f >= static_cast<std::uint32_t>(params.feature_dim())) {
      throw ConfigError("feature bucket " + std::to_string(f) + " outside feature_dim " +
                        std::to_string(params.feature_dim()));
    }
  }
}

inline std::vector<double> logits(const PolicyParams& params, const ContextFeatures& ctx) {
  check_features(params, ctx);
  std::vector<double> z(static_cast<std::size_t>(params.vocab_size()), 0.0);
  for (std::uint32_t f : ctx.active) {
    const auto w = params.row(f);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] += w[k];
  }
  return z;
}

// Sends every logit outside `allowed` to -inf; an empty list keeps all.
inline void mask_logits(std::vector<double>& z, std::span<const TokenId> allowed) {
  if (allowed.empty()) return;
  std::vector<double> masked(z.size(), -std::numeric_limits<double>::infinity());
  for (TokenId t : allowed) {
    if (t < 0 || static_cast<std::size_t>(t) >= z.size()) throw ConfigError("allowed token outside vocabulary");
    masked[static_cast<std::size_t>(t)] = z[static_cast<std::size_t>(t)];
  }
  z.swap(masked);
}

// Tempered categorical distribution softmax(z / T) in log space.
struct Distribution {
  std::vector<double> log_probs;
  std::vector<double> probs;
  double entropy = 0.0;
};

inline Distribution softmax(std::span<const double> z, double temperature = 1.0) {
  Distribution d;
  const std::size_t n = z.size();
  d.log_probs.resize(n);
  d.probs.resize(n);
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    d.log_probs[k] = (z[k] - zmax) / temperature;
    total += std::exp(d.log_probs[k]);
  }
  const double log_total = std::log(total);
  double entropy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    d.log_probs[k] -= log_total;
    d.probs[k] = std::exp(d.log_probs[k]);
    if (d.probs[k] > 0.0) entropy -= d.probs[k] * d.log_probs[k];
  }
  d.entropy = std::clamp(entropy, 0.0, std::log(static_cast<double>(n)));
  return d;
}

struct LogProbEntropy {
  double log_prob = 0.0;
  double entropy = 0.0;
};

inline LogProbEntropy log_prob_and_entropy(const PolicyParams& params, const ContextFeatures& ctx,
                                           TokenId token, double temperature = 1.0) {
  if (token < 0 || token >= params.vocab_size()) {
    throw ConfigError("token " + std::to_string(token) + " outside vocabulary");
  }
  const auto z = logits(params, ctx);
  const Distribution d = softmax(z, temperature);
  return {d.log_probs[static_cast<std::size_t>(token)], d.entropy};
}

// Gradient restricted to the active feature rows; values is row-major
// [rows.size() x vocab].
struct SparseGradient {
  std::vector<std::uint32_t> rows;
  std::vector<double> values;
  int vocab_size = 0;
};

inline SparseGradient grad_log_prob(const PolicyParams& params, const ContextFeatures& ctx,
                                    TokenId token, double temperature = 1.0) {
  const auto z = logits(params, ctx);
  const Distribution d = softmax(z, temperature);
  SparseGradient g;
  g.vocab_size = params.vocab_size();
  g.rows = ctx.active;
  g.values.reserve(ctx.active.size() * d.probs.size());
  for (std::size_t r = 0; r < ctx.active.size(); ++r) {
    for (std::size_t k = 0; k < d.probs.size(); ++k) {
      const double indicator = static_cast<TokenId>(k) == token ? 1.0 : 0.0;
      g.values.push_back((indicator - d.probs[k]) / temperature);
    }
  }
  return g;
}

// Dense accumulator with the same shape as the weights.
class Gradient {
 public:
  explicit Gradient(const PolicyParams& like)
      : vocab_size_(like.vocab_size()), values_(like.weights().size(), 0.0) {}

  // values += scale * d log pi(token | ctx) / dW, given the tempered probabilities.
  void add_log_prob_term(const ContextFeatures& ctx, std::span<const double> probs, TokenId token,
                         double temperature, double scale) {
    for (std::uint32_t f : ctx.active) {
      double* row = values_.data() + static_cast<std::size_t>(f) * vocab_size_;
      for (std::size_t k = 0; k < probs.size(); ++k) {
        const double indicator = static_cast<TokenId>(k) == token ? 1.0 : 0.0;
        row[k] += scale * (indicator - probs[k]) / temperature;
      }
    }
  }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

 private:
  int vocab_size_;
  std::vector<double> values_;
};

// Plain gradient ascent: W <- W + lr * g. Throws TrainingError (params
// untouched) on a non-finite gradient or result.
inline void apply_update(PolicyParams& params, const Gradient& gradient, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw TrainingError("learning rate must be finite and >= 0");
  }
  const auto g = gradient.values();
  if (g.size() != params.weights().size()) throw ConfigError("gradient shape mismatch");
  if (!all_finite(g)) throw TrainingError("non-finite gradient; update aborted");
  std::vector<double> next(params.weights().begin(), params.weights().end());
  for (std::size_t i = 0; i < next.size(); ++i) next[i] += lr * g[i];
  if (!all_finite(next)) throw TrainingError("update overflowed; update aborted");
  std::copy(next.begin(), next.end(), params.weights().begin());
}

// Checkpoint text format (version 1):
//   hapo-checkpoint 1
//   window <int> buckets <int> position <0|1> prompt <0|1> vocab <int>
//   nonzero <count>
//   <bucket> <token> <hexfloat weight>      (one line per nonzero weight)
// Hex floats make the round trip exact.
inline void write_checkpoint(std::ostream& out, const PolicyParams& params) {
  const FeatureSpec& fs = params.feature_spec();
  const auto w = params.weights();
  const std::size_t nonzero =
      static_cast<std::size_t>(std::count_if(w.begin(), w.end(), [](double v) { return v != 0.0; }));
  out << "hapo-checkpoint 1\n"
      << "window " << fs.window << " buckets " << fs.buckets << " position "
      << (fs.use_position ? 1 : 0) << " prompt " << (fs.condition_on_prompt ? 1 : 0) << " vocab "
      << params.vocab_size() << "\n"
      << "nonzero " << nonzero << "\n";
  std::ostringstream line;
  line << std::hexfloat;
  const auto vocab = static_cast<std::size_t>(params.vocab_size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    line.str("");
    line << (i / vocab) << ' ' << (i % vocab) << ' ' << w[i] << '\n';
    out << line.str();
  }
}

inline PolicyParams read_checkpoint(std::istream& in) {
  std::string magic, key;
  int version = 0;
  if (!(in >> magic >> version) || magic != "hapo-checkpoint" || version != 1) {
    throw RunError("not a version-1 hapo checkpoint");
  }
  FeatureSpec fs;
  int position = 0, prompt = 0, vocab = 0;
  std::size_t nonzero = 0;
  in >> key >> fs.window >> key >> fs.buckets >> key >> position >> key >> prompt >> key >>
      vocab >> key >> nonzero;
  if (!in) throw RunError("truncated checkpoint header");
  fs.use_position = position != 0;
  fs.condition_on_prompt = prompt != 0;
  PolicyParams params(fs, vocab);
  auto w = params.weights();
  for (std::size_t i = 0; i < nonzero; ++i) {
    std::size_t bucket = 0, token = 0;
    std::string text;
    if (!(in >> bucket >> token >> text)) throw RunError("truncated checkpoint body");
    if (bucket >= static_cast<std::size_t>(fs.buckets) || token >= static_cast<std::size_t>(vocab)) {
      throw RunError("checkpoint entry out of range");
    }
    w[bucket * static_cast<std::size_t>(vocab) + token] = std::strtod(text.c_str(), nullptr);
  }
  return params;
}

}  // namespace hapo

#endif  // HAPO_POLICY_HPP_
