#ifndef HAPO_SAMPLER_HPP_
#define HAPO_SAMPLER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "hapo/common.hpp"
#include "hapo/entropy_stats.hpp"
#include "hapo/env.hpp"
#include "hapo/policy.hpp"

namespace hapo {

enum class TemperatureMode { kFixed, kBinary, kContinuous };

inline std::string to_string(TemperatureMode mode) {
  switch (mode) {
    case TemperatureMode::kFixed: return "fixed";
    case TemperatureMode::kBinary: return "binary";
    case TemperatureMode::kContinuous: return "continuous";
  }
  return "?";
}

inline TemperatureMode temperature_mode_from_string(const std::string& name) {
  if (name == "fixed") return TemperatureMode::kFixed;
  if (name == "binary") return TemperatureMode::kBinary;
  if (name == "continuous") return TemperatureMode::kContinuous;
  throw ConfigError("unknown temperature mode '" + name + "'");
}

struct SamplerParams {
  TemperatureMode mode = TemperatureMode::kFixed;
  double t_base = 1.0;
  double tau = 0.05;
  double threshold = 0.5;  // binary mode entropy threshold (nats)
  double t_high = 1.1;
  double t_low = 0.8;
  int group_size = 8;
  int max_len = 0;  // 0: use the task's max_len
  double entropy_floor = kEntropyFloor;
};

inline void validate(const SamplerParams& p) {
  if (!(p.t_base > 0.0)) throw ConfigError("sampler.t_base must be > 0");
  if (!(p.tau >= 0.0)) throw ConfigError("sampler.tau must be >= 0");
  if (!(p.t_low > 0.0) || !(p.t_high >= p.t_low)) {
    throw ConfigError("sampler requires t_high >= t_low > 0");
  }
  if (p.group_size < 2) throw ConfigError("sampler.group_size must be >= 2");
  if (p.max_len < 0) throw ConfigError("sampler.max_len must be >= 0");
  if (!(p.entropy_floor > 0.0)) throw ConfigError("sampler.entropy_floor must be > 0");
}

// Per-token temperature. `entropy` is measured on the base-temperature
// distribution. Continuous mode without a prior (first step) falls back to
// T_base.
inline double adaptive_temperature(double entropy, const std::optional<EntropyPrior>& prior,
                                   const SamplerParams& p) {
  switch (p.mode) {
    case TemperatureMode::kFixed:
      return p.t_base;
    case TemperatureMode::kBinary:
      return entropy > p.threshold ? p.t_high : p.t_low;
    case TemperatureMode::kContinuous: {
      if (!prior) return p.t_base;
      if (!(prior->sigma > 0.0)) throw StatisticsError("temperature prior sigma must be > 0");
      const double log_h = std::log(std::max(entropy, p.entropy_floor));
      const double t = p.t_base * (1.0 + (log_h - prior->quantile) / prior->sigma * p.tau);
      return std::clamp(t, 0.5 * p.t_base, 2.0 * p.t_base);
    }
  }
  return p.t_base;
}

// Inverse-CDF draw from softmax(logits / T); consumes exactly one engine call.
template <typename Engine>
TokenId sample_token(std::span<const double> logits, double temperature, Engine& rng) {
  const Distribution d = softmax(logits, temperature);
  const double u = uniform01(rng);
  double cdf = 0.0;
  for (std::size_t k = 0; k < d.probs.size(); ++k) {
    cdf += d.probs[k];
    if (u < cdf) return static_cast<TokenId>(k);
  }
  // Rounding left u above the final cdf; return the last token with mass.
  for (std::size_t k = d.probs.size(); k-- > 0;) {
    if (d.probs[k] > 0.0) return static_cast<TokenId>(k);
  }
  return 0;
}

struct TokenRecord {
  TokenId token = 0;
  double old_log_prob = 0.0;  // log pi_old(token) at T_base
  double entropy = 0.0;       // H at T_base, nats
  double temperature = 1.0;   // temperature actually sampled with
  int position = 0;
  bool forced = false;        // the grammar left a single legal token
};

struct RolloutGroup {
  std::uint64_t prompt_id = 0;
  env::Prompt prompt;
  std::vector<std::vector<TokenRecord>> sequences;
  std::vector<int> rewards;
};

inline std::vector<TokenId> response_tokens(std::span<const TokenRecord> records) {
  std::vector<TokenId> tokens;
  tokens.reserve(records.size());
  for (const auto& r : records) tokens.push_back(r.token);
  return tokens;
}

inline int effective_max_len(const env::Prompt& prompt, const SamplerParams& p) {
  return p.max_len > 0 ? std::min(p.max_len, prompt.task.max_len) : prompt.task.max_len;
}

inline std::vector<TokenRecord> rollout_sequence(const PolicyParams& params,
                                                 const env::Prompt& prompt,
                                                 const SamplerParams& p,
                                                 const std::optional<EntropyPrior>& prior,
                                                 std::uint64_t stream_seed) {
  std::mt19937_64 rng(stream_seed);
  const int max_len = effective_max_len(prompt, p);
  std::vector<TokenRecord> records;
  std::vector<TokenId> prefix;
  for (int pos = 0; pos < max_len; ++pos) {
    const ContextFeatures ctx = featurize(params.feature_spec(), prompt.tokens, prefix);
    std::vector<double> z = logits(params, ctx);
    const std::vector<TokenId> allowed = env::allowed_tokens(prompt, pos);
    mask_logits(z, allowed);
    const Distribution base = softmax(z, p.t_base);
    const double temperature = adaptive_temperature(base.entropy, prior, p);
    const TokenId token = sample_token(z, temperature, rng);
    records.push_back({token, base.log_probs[static_cast<std::size_t>(token)], base.entropy,
                       temperature, pos, allowed.size() == 1});
    prefix.push_back(token);
    if (token == env::kEos) break;
  }
  return records;
}

// Seed of the rng stream owned by sequence `index` of a group.
inline std::uint64_t sequence_seed(std::uint64_t group_seed, std::size_t index) {
  return derive_seed(group_seed, {0x73657175656e6365ULL, index});
}

inline RolloutGroup rollout_group(const PolicySnapshot& snapshot, const env::Prompt& prompt,
                                  const SamplerParams& p,
                                  const std::optional<EntropyPrior>& prior,
                                  std::uint64_t group_seed) {
  validate(p);
  if (snapshot.params().vocab_size() != prompt.task.vocab_size) {
    throw ConfigError("policy vocabulary does not match the task vocabulary");
  }
  RolloutGroup group;
  group.prompt_id = prompt.id;
  group.prompt = prompt;
  group.sequences.reserve(static_cast<std::size_t>(p.group_size));
  group.rewards.reserve(static_cast<std::size_t>(p.group_size));
  for (int i = 0; i < p.group_size; ++i) {
    auto seq = rollout_sequence(snapshot.params(), prompt, p, prior,
                                sequence_seed(group_seed, static_cast<std::size_t>(i)));
    group.rewards.push_back(env::score(prompt, response_tokens(seq)));
    group.sequences.push_back(std::move(seq));
  }
  return group;
}

// Rolls out one group per prompt. Work is split across `workers` threads;
// each group owns its seed, so results do not depend on the worker count.
inline std::vector<RolloutGroup> rollout_batch(const PolicySnapshot& snapshot,
                                               std::span<const env::Prompt> prompts,
                                               std::span<const std::uint64_t> group_seeds,
                                               const SamplerParams& p,
                                               const std::optional<EntropyPrior>& prior,
                                               int workers = 1) {
  if (prompts.size() != group_seeds.size()) throw ConfigError("one seed per prompt required");
  std::vector<RolloutGroup> groups(prompts.size());
  const std::size_t n_workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, prompts.size() ? prompts.size() : 1);
  if (n_workers == 1) {
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      groups[i] = rollout_group(snapshot, prompts[i], p, prior, group_seeds[i]);
    }
    return groups;
  }
  std::vector<std::exception_ptr> errors(n_workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < prompts.size(); i += n_workers) {
            groups[i] = rollout_group(snapshot, prompts[i], p, prior, group_seeds[i]);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return groups;
}

}  // namespace hapo

#endif  // HAPO_SAMPLER_HPP_
