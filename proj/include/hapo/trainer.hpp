#ifndef HAPO_TRAINER_HPP_
#define HAPO_TRAINER_HPP_

// One optimization step, in order:
//   rollout (carried entropy prior) -> batch entropy statistics ->
//   dynamic-sampling filter -> token advantages -> per mini-batch
//   {h-tilde, clip bounds, neutral zone, ratios, redistribution, surrogate,
//   ascent update} -> carry statistics to the next step.
// Baselines reuse the same path with components switched off.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hapo/advantage.hpp"
#include "hapo/common.hpp"
#include "hapo/entropy_stats.hpp"
#include "hapo/env.hpp"
#include "hapo/loss.hpp"
#include "hapo/objective.hpp"
#include "hapo/policy.hpp"
#include "hapo/sampler.hpp"

namespace hapo {

enum class AdvantageScope { kGroup, kBatch };

inline std::string to_string(AdvantageScope s) { return s == AdvantageScope::kGroup ? "group" : "batch"; }

inline AdvantageScope advantage_scope_from_string(const std::string& s) {
  if (s == "group") return AdvantageScope::kGroup;
  if (s == "batch") return AdvantageScope::kBatch;
  throw ConfigError("unknown advantage scope '" + s + "'");
}

// A: adaptive temperature, B: token-level group average, C: advantage
// redistribution, D: asymmetric adaptive clipping.
struct Components {
  bool adaptive_temperature = false;
  bool token_level_advantage = false;
  bool redistribution = false;
  bool adaptive_clipping = false;

  bool operator==(const Components&) const = default;
};

inline Components components_from_letters(const std::string& letters) {
  Components c;
  for (char ch : letters) {
    switch (ch) {
      case 'A': c.adaptive_temperature = true; break;
      case 'B': c.token_level_advantage = true; break;
      case 'C': c.redistribution = true; break;
      case 'D': c.adaptive_clipping = true; break;
      default:
        throw ConfigError(std::string("invalid component letter '") + ch +
                          "' (expected a subset of ABCD)");
    }
  }
  return c;
}

inline std::string to_letters(const Components& c) {
  std::string s;
  if (c.adaptive_temperature) s += 'A';
  if (c.token_level_advantage) s += 'B';
  if (c.redistribution) s += 'C';
  if (c.adaptive_clipping) s += 'D';
  return s;
}

struct EvalConfig {
  int interval = 25;  // 0: evaluate on the final step only
  int prompts = 64;
  int samples = 8;
  double temperature = 0.5;
};

struct TrainConfig {
  Algorithm algo = Algorithm::kHapo;
  // Explicit component set; empty optional means the algorithm default
  // (hapo: ABCD, others: none).
  std::optional<std::string> components;
  int batch_size = 32;
  int num_minibatches = 4;
  double learning_rate = 10.0;
  int warmup_steps = 10;
  int total_steps = 200;
  std::uint64_t seed = 0;
  double rho = 80.0;
  AdvantageScope advantage_scope = AdvantageScope::kGroup;
  double grpo_epsilon = 0.2;
  bool force_zero_h_tilde = false;  // pins h-tilde to 0 for every token
  bool bootstrap_stats = true;      // extra fixed-temperature pass before step 0
  int workers = 1;
  FeatureSpec features;
  SamplerParams sampler{TemperatureMode::kContinuous};
  RedistributionParams redistribution{RedistributionMode::kContinuous};
  ClipBounds clip{ClipMode::kContinuous};
  ForkingMaskParams fork;
  std::vector<env::TaskSpec> tasks{env::TaskSpec{}};
  EvalConfig eval;
  int checkpoint_interval = 50;
  bool trace = false;
};

// What actually runs for a given config.
struct Pipeline {
  Algorithm loss_algo = Algorithm::kDapo;
  Components components;
  bool dynamic_sampling = true;
  bool fork_mask = false;
  TemperatureMode temperature = TemperatureMode::kFixed;
  RedistributionMode redistribution = RedistributionMode::kOff;
  RedistributionOrder order = RedistributionOrder::kPostNorm;
  ClipBounds clip;
};

inline Components default_components(Algorithm algo) {
  return algo == Algorithm::kHapo ? components_from_letters("ABCD") : Components{};
}

inline void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.num_minibatches < 1) throw ConfigError("num_minibatches must be >= 1");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ConfigError("learning_rate must be > 0");
  }
  if (cfg.warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (cfg.total_steps < 0) throw ConfigError("total_steps must be >= 0");
  if (!(cfg.rho > 0.0 && cfg.rho < 100.0)) throw ConfigError("rho must lie in (0, 100)");
  if (!(cfg.grpo_epsilon > 0.0 && cfg.grpo_epsilon < 1.0)) {
    throw ConfigError("grpo_epsilon must lie in (0, 1)");
  }
  if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
  if (cfg.tasks.empty()) throw ConfigError("at least one task is required");
  if (cfg.eval.interval < 0 || cfg.eval.prompts < 0 || cfg.eval.samples < 1 ||
      !(cfg.eval.temperature > 0.0)) {
    throw ConfigError("invalid eval settings");
  }
  if (cfg.checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
  validate(cfg.features);
  validate(cfg.sampler);
  validate(cfg.redistribution);
  validate(cfg.clip);
  validate(cfg.fork);
  const int vocab = cfg.tasks.front().vocab_size;
  for (const auto& t : cfg.tasks) {
    env::validate(t);
    if (t.vocab_size != vocab) throw ConfigError("all tasks must share one vocab_size");
  }
  if (cfg.components) components_from_letters(*cfg.components);
}

inline Pipeline resolve_pipeline(const TrainConfig& cfg) {
  Pipeline p;
  p.components = cfg.components ? components_from_letters(*cfg.components)
                                : default_components(cfg.algo);
  p.loss_algo = cfg.algo;
  p.fork_mask = cfg.algo == Algorithm::kDapoFork;
  // GRPO keeps zero-variance groups (their advantages are 0); the token-level
  // average is undefined on them, so they are always dropped there.
  p.dynamic_sampling = cfg.algo != Algorithm::kGrpo || p.components.token_level_advantage;
  if (p.components.adaptive_temperature) {
    p.temperature = cfg.sampler.mode == TemperatureMode::kFixed ? TemperatureMode::kContinuous
                                                                : cfg.sampler.mode;
  }
  if (p.components.redistribution) {
    p.redistribution = cfg.redistribution.mode;
    p.order = cfg.redistribution.order;
  }
  p.clip = cfg.clip;
  if (p.components.adaptive_clipping) {
    if (p.clip.mode == ClipMode::kUniform) p.clip.mode = ClipMode::kContinuous;
  } else {
    p.clip.mode = ClipMode::kUniform;
    if (cfg.algo == Algorithm::kGrpo) {
      p.clip.eps_left_base = cfg.grpo_epsilon;
      p.clip.eps_right_base = cfg.grpo_epsilon;
    }
  }
  return p;
}

struct TrainState {
  PolicyParams params;
  int step = 0;
  std::optional<EntropyPrior> prior;
};

inline TrainState initial_state(const TrainConfig& cfg) {
  validate(cfg);
  return {PolicyParams(cfg.features, cfg.tasks.front().vocab_size), 0, std::nullopt};
}

struct StepMetrics {
  int step = 0;
  bool skipped = false;
  int groups_total = 0;
  int groups_kept = 0;
  double mean_reward = 0.0;
  std::optional<double> eval_accuracy;
  std::optional<double> eval_greedy_accuracy;
  double mean_response_length = 0.0;
  int max_response_length = 0;
  double mean_entropy = 0.0;
  double entropy_quantile = 0.0;
  double entropy_sigma = 0.0;
  double h_max = 0.0;
  double h_min = 0.0;
  bool stats_degenerate = false;
  double prior_quantile = 0.0;  // prior used by this step's rollout (0 when absent)
  double prior_sigma = 0.0;
  bool prior_present = false;
  std::optional<double> adv_mean;
  std::optional<double> adv_max;
  std::optional<double> adv_min;
  int adv_positive = 0;
  int adv_negative = 0;
  int clip_left_high = 0;   // h-tilde > 0
  int clip_left_low = 0;    // h-tilde <= 0
  int clip_right_high = 0;
  int clip_right_low = 0;
  int critical_tokens = 0;
  std::optional<double> critical_mean_entropy;
  std::optional<double> loss;
  double learning_rate = 0.0;
  std::optional<double> first_minibatch_ratio_dev;  // max |r - 1| in mini-batch 0
  std::vector<std::string> events;
};

// Optional per-token observers used for trace files.
struct RolloutTokenEvent {
  int step;
  std::uint64_t prompt_id;
  std::size_t sequence;
  const TokenRecord& record;
};

struct UpdateTokenEvent {
  int step;
  int minibatch;
  int num_minibatches;
  std::uint64_t prompt_id;
  std::size_t sequence;
  int position;
  const UpdateToken& token;
  const TokenOutcome& outcome;
};

struct StepObserver {
  std::function<void(const RolloutTokenEvent&)> on_rollout;
  std::function<void(const UpdateTokenEvent&)> on_update;
};

namespace detail {
inline constexpr std::uint64_t kTagTask = 1;
inline constexpr std::uint64_t kTagPrompt = 2;
inline constexpr std::uint64_t kTagRollout = 3;
inline constexpr std::uint64_t kTagBootstrap = 4;
inline constexpr std::uint64_t kTagShuffle = 5;
inline constexpr std::uint64_t kTagEvalPrompt = 6;
inline constexpr std::uint64_t kTagEvalSample = 7;
}  // namespace detail

struct StepPrompts {
  std::vector<env::Prompt> prompts;
  std::vector<std::uint64_t> group_seeds;
};

inline StepPrompts make_step_prompts(const TrainConfig& cfg, int step, std::uint64_t tag) {
  StepPrompts sp;
  const auto s = static_cast<std::uint64_t>(step);
  for (int b = 0; b < cfg.batch_size; ++b) {
    const auto bi = static_cast<std::uint64_t>(b);
    const std::size_t task =
        derive_seed(cfg.seed, {detail::kTagTask, tag, s, bi}) % cfg.tasks.size();
    sp.prompts.push_back(
        env::make_prompt(cfg.tasks[task], derive_seed(cfg.seed, {detail::kTagPrompt, tag, s, bi})));
    sp.group_seeds.push_back(derive_seed(cfg.seed, {detail::kTagRollout, tag, s, bi}));
  }
  return sp;
}

inline SamplerParams sampler_for(const TrainConfig& cfg, TemperatureMode mode) {
  SamplerParams p = cfg.sampler;
  p.mode = mode;
  return p;
}

// Drops groups whose rewards are all equal; survivors keep their order.
inline std::vector<RolloutGroup> dynamic_sampling_filter(std::vector<RolloutGroup> groups) {
  if (groups.empty()) throw ConfigError("dynamic sampling over an empty batch");
  std::vector<RolloutGroup> kept;
  for (auto& g : groups) {
    const bool varied = std::any_of(g.rewards.begin(), g.rewards.end(),
                                    [&](int r) { return r != g.rewards.front(); });
    if (varied) kept.push_back(std::move(g));
  }
  return kept;
}

// Entropies of every rollout token, or with decisions_only those of tokens
// the grammar did not force (all of them when every token was forced).
inline std::vector<double> collect_entropies(std::span<const RolloutGroup> groups,
                                             bool decisions_only = false) {
  std::vector<double> h;
  for (const auto& g : groups) {
    for (const auto& seq : g.sequences) {
      for (const auto& r : seq) {
        if (!decisions_only || !r.forced) h.push_back(r.entropy);
      }
    }
  }
  if (decisions_only && h.empty()) return collect_entropies(groups, false);
  return h;
}

// Estimates the step-0 prior from one fixed-temperature pass.
inline EntropyPrior bootstrap_prior(const TrainConfig& cfg, const PolicyParams& params) {
  const StepPrompts sp = make_step_prompts(cfg, 0, detail::kTagBootstrap);
  const auto groups = rollout_batch(snapshot(params), sp.prompts, sp.group_seeds,
                                    sampler_for(cfg, TemperatureMode::kFixed), std::nullopt,
                                    cfg.workers);
  return carryover(
      batch_stats(collect_entropies(groups, true), cfg.rho, cfg.sampler.entropy_floor));
}

inline double learning_rate_at(const TrainConfig& cfg, int step) {
  if (cfg.warmup_steps <= 0) return cfg.learning_rate;
  return cfg.learning_rate * std::min(1.0, static_cast<double>(step + 1) / cfg.warmup_steps);
}

namespace detail {

struct SequenceRef {
  std::size_t group = 0;
  std::size_t sequence = 0;
  std::size_t offset = 0;  // first token in the flat training arrays
  std::size_t length = 0;
};

// Balanced contiguous split of the (shuffled) sequence order by token count.
inline std::vector<std::vector<std::size_t>> partition_minibatches(
    std::span<const SequenceRef> seqs, std::span<const std::size_t> order, int parts) {
  std::size_t total = 0;
  for (const auto& s : seqs) total += s.length;
  std::vector<std::vector<std::size_t>> mbs(static_cast<std::size_t>(parts));
  std::size_t cumulative = 0;
  for (std::size_t idx : order) {
    const std::size_t mid2 = 2 * cumulative + seqs[idx].length;  // twice the midpoint
    auto part = static_cast<std::size_t>((mid2 * static_cast<std::size_t>(parts)) / (2 * total));
    part = std::min(part, static_cast<std::size_t>(parts - 1));
    mbs[part].push_back(idx);
    cumulative += seqs[idx].length;
  }
  std::erase_if(mbs, [](const auto& m) { return m.empty(); });
  return mbs;
}

}  // namespace detail

inline StepMetrics train_step(TrainState& state, const TrainConfig& cfg,
                              const StepObserver* observer = nullptr) {
  const Pipeline pipe = resolve_pipeline(cfg);
  StepMetrics m;
  m.step = state.step;
  m.learning_rate = learning_rate_at(cfg, state.step);

  if (pipe.temperature == TemperatureMode::kContinuous && !state.prior && cfg.bootstrap_stats) {
    state.prior = bootstrap_prior(cfg, state.params);
    m.events.push_back("bootstrap_prior");
  }
  if (state.prior) {
    m.prior_present = true;
    m.prior_quantile = state.prior->quantile;
    m.prior_sigma = state.prior->sigma;
  }

  // (1) rollout
  const PolicySnapshot old_policy = snapshot(state.params);
  const StepPrompts sp = make_step_prompts(cfg, state.step, detail::kTagRollout);
  std::vector<RolloutGroup> groups =
      rollout_batch(old_policy, sp.prompts, sp.group_seeds, sampler_for(cfg, pipe.temperature),
                    state.prior, cfg.workers);

  std::size_t n_seq = 0, n_tok = 0, reward_sum = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t i = 0; i < groups[g].sequences.size(); ++i) {
      const auto& seq = groups[g].sequences[i];
      ++n_seq;
      n_tok += seq.size();
      reward_sum += static_cast<std::size_t>(groups[g].rewards[i]);
      m.max_response_length = std::max(m.max_response_length, static_cast<int>(seq.size()));
      if (observer && observer->on_rollout) {
        for (const auto& r : seq) observer->on_rollout({state.step, groups[g].prompt_id, i, r});
      }
    }
  }
  m.groups_total = static_cast<int>(groups.size());
  m.mean_reward = static_cast<double>(reward_sum) / static_cast<double>(n_seq);
  m.mean_response_length = static_cast<double>(n_tok) / static_cast<double>(n_seq);

  // (4) entropy statistics over every rollout token the grammar left open;
  // forced tokens (entropy 0) would otherwise sit at the log floor and
  // dominate sigma and h_min.
  const std::vector<double> all_entropy = collect_entropies(groups);
  m.mean_entropy = stable_sum(all_entropy) / static_cast<double>(all_entropy.size());
  const EntropyStats stats =
      batch_stats(collect_entropies(groups, true), cfg.rho, cfg.sampler.entropy_floor);
  m.entropy_quantile = stats.quantile;
  m.entropy_sigma = stats.sigma;
  m.h_max = stats.h_max;
  m.h_min = stats.h_min;
  m.stats_degenerate = stats.degenerate;
  if (stats.degenerate) m.events.push_back("degenerate_entropy_sigma");

  auto finish = [&](StepMetrics&& out) {
    state.prior = carryover(stats);
    ++state.step;
    return std::move(out);
  };

  // (2) dynamic sampling
  if (pipe.dynamic_sampling) groups = dynamic_sampling_filter(std::move(groups));
  m.groups_kept = static_cast<int>(groups.size());
  if (groups.empty()) {
    m.skipped = true;
    m.events.push_back("all_groups_degenerate");
    return finish(std::move(m));
  }

  // (3) flatten and compute advantages
  std::vector<detail::SequenceRef> seqs;
  std::vector<UpdateToken> tokens;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    for (std::size_t i = 0; i < group.sequences.size(); ++i) {
      const auto& seq = group.sequences[i];
      seqs.push_back({g, i, tokens.size(), seq.size()});
      std::vector<TokenId> prefix;
      for (const auto& r : seq) {
        UpdateToken t;
        t.features = featurize(cfg.features, group.prompt.tokens, prefix);
        t.token = r.token;
        t.allowed = env::allowed_tokens(group.prompt, r.position);
        t.old_log_prob = r.old_log_prob;
        t.entropy = r.entropy;
        t.h_tilde = cfg.force_zero_h_tilde
                        ? 0.0
                        : scale_entropy(r.entropy, stats, cfg.sampler.entropy_floor).h_tilde;
        tokens.push_back(std::move(t));
        prefix.push_back(r.token);
      }
    }
  }

  const bool pre_norm = pipe.redistribution != RedistributionMode::kOff &&
                        pipe.order == RedistributionOrder::kPreNorm;
  auto pre_norm_scale = [&](double h_tilde) {
    if (pipe.redistribution == RedistributionMode::kBinary) {
      return h_tilde > 0.0 ? cfg.redistribution.alpha_high : cfg.redistribution.alpha_low;
    }
    return 1.0 + h_tilde;
  };
  // Normalizes one unit: the sequences seqs[first, last).
  auto assign_unit = [&](std::size_t first, std::size_t last) {
    std::vector<double> rewards;
    std::vector<std::size_t> lengths;
    for (std::size_t k = first; k < last; ++k) {
      rewards.push_back(groups[seqs[k].group].rewards[seqs[k].sequence]);
      lengths.push_back(seqs[k].length);
    }
    std::vector<double> token_adv;
    if (pipe.components.token_level_advantage) {
      if (pre_norm) {
        std::vector<double> scales;
        for (std::size_t k = first; k < last; ++k) {
          for (std::size_t t = 0; t < seqs[k].length; ++t) {
            scales.push_back(pre_norm_scale(tokens[seqs[k].offset + t].h_tilde));
          }
        }
        token_adv = redistribute_pre_norm(rewards, lengths, scales).redistributed;
      } else {
        token_adv = token_level_group_advantage(rewards, lengths).advantage;
      }
    } else {
      const SequenceAdvantage adv = grpo_sequence_advantage(rewards);
      token_adv = broadcast_to_tokens(adv.values, lengths);
    }
    std::size_t j = 0;
    for (std::size_t k = first; k < last; ++k) {
      for (std::size_t t = 0; t < seqs[k].length; ++t) {
        tokens[seqs[k].offset + t].advantage = token_adv[j++];
      }
    }
  };
  if (cfg.advantage_scope == AdvantageScope::kBatch && pipe.components.token_level_advantage) {
    assign_unit(0, seqs.size());
  } else {
    std::size_t first = 0;
    while (first < seqs.size()) {
      std::size_t last = first;
      while (last < seqs.size() && seqs[last].group == seqs[first].group) ++last;
      assign_unit(first, last);
      first = last;
    }
  }

  if (pipe.fork_mask) {
    std::vector<double> h(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) h[i] = tokens[i].entropy;
    const std::vector<bool> mask = forking_mask(h, cfg.fork);
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i].keep = mask[i];
  }

  for (const auto& t : tokens) {
    if (t.h_tilde > 0.0) ++m.critical_tokens;
  }
  if (m.critical_tokens > 0) {
    std::vector<double> crit;
    for (const auto& t : tokens) {
      if (t.h_tilde > 0.0) crit.push_back(t.entropy);
    }
    m.critical_mean_entropy = stable_sum(crit) / static_cast<double>(crit.size());
  }

  // (5) mini-batch updates against the rollout snapshot
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(
      derive_seed(cfg.seed, {detail::kTagShuffle, static_cast<std::uint64_t>(state.step)}));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[shuffle_rng() % i]);
  }
  const auto minibatches = detail::partition_minibatches(seqs, order, cfg.num_minibatches);

  ObjectiveSettings settings;
  settings.loss_algo = pipe.loss_algo;
  settings.clip = pipe.clip;
  settings.redistribution = cfg.redistribution;
  settings.redistribution.mode = pre_norm ? RedistributionMode::kOff : pipe.redistribution;
  settings.temperature = cfg.sampler.t_base;
  settings.use_mask = pipe.fork_mask;
  settings.exclude_masked_from_denominator = cfg.fork.exclude_masked_from_denominator;

  const PolicyParams rollback = state.params;
  std::vector<double> adv_hat_all;
  std::vector<double> losses;
  for (std::size_t mb = 0; mb < minibatches.size(); ++mb) {
    std::vector<UpdateToken> mb_tokens;
    std::vector<std::size_t> lengths;
    for (std::size_t idx : minibatches[mb]) {
      const auto& s = seqs[idx];
      lengths.push_back(s.length);
      mb_tokens.insert(mb_tokens.end(), tokens.begin() + static_cast<std::ptrdiff_t>(s.offset),
                       tokens.begin() + static_cast<std::ptrdiff_t>(s.offset + s.length));
    }
    if (pipe.fork_mask && std::none_of(mb_tokens.begin(), mb_tokens.end(),
                                       [](const UpdateToken& t) { return t.keep; })) {
      m.events.push_back("minibatch_fully_masked");
      continue;
    }
    const MinibatchOutcome out = evaluate_minibatch(state.params, mb_tokens, lengths, settings);
    if (mb == 0) {
      double dev = 0.0;
      for (const auto& o : out.tokens) dev = std::max(dev, std::abs(o.ratio - 1.0));
      m.first_minibatch_ratio_dev = dev;
    }
    if (!std::isfinite(out.loss)) {
      state.params = rollback;
      m.events.push_back("non_finite_loss_rollback");
      m.loss.reset();
      return finish(std::move(m));
    }
    try {
      apply_update(state.params, *out.gradient, m.learning_rate);
    } catch (const TrainingError&) {
      state.params = rollback;
      m.events.push_back("non_finite_gradient_rollback");
      m.loss.reset();
      return finish(std::move(m));
    }
    losses.push_back(out.loss);
    std::size_t j = 0;
    for (std::size_t idx : minibatches[mb]) {
      const auto& s = seqs[idx];
      for (std::size_t t = 0; t < s.length; ++t, ++j) {
        const TokenOutcome& o = out.tokens[j];
        const bool high = mb_tokens[j].h_tilde > 0.0;
        if (!pipe.fork_mask || mb_tokens[j].keep) adv_hat_all.push_back(o.redistributed);
        if (o.term.clipped_left) ++(high ? m.clip_left_high : m.clip_left_low);
        if (o.term.clipped_right) ++(high ? m.clip_right_high : m.clip_right_low);
        if (observer && observer->on_update) {
          observer->on_update({state.step, static_cast<int>(mb),
                               static_cast<int>(minibatches.size()),
                               groups[s.group].prompt_id, s.sequence, static_cast<int>(t),
                               mb_tokens[j], o});
        }
      }
    }
  }
  if (!losses.empty()) m.loss = stable_sum(losses) / static_cast<double>(losses.size());
  if (!adv_hat_all.empty()) {
    const AdvantageSummary s = summarize(adv_hat_all);
    m.adv_mean = s.mean;
    m.adv_max = s.max;
    m.adv_min = s.min;
    m.adv_positive = static_cast<int>(s.positive);
    m.adv_negative = static_cast<int>(s.negative);
  }
  // (6) carryover
  return finish(std::move(m));
}

// Held-out evaluation prompts; seeds are tagged apart from every training
// prompt.
inline std::vector<env::Prompt> eval_prompts(const TrainConfig& cfg) {
  std::vector<env::Prompt> prompts;
  for (int j = 0; j < cfg.eval.prompts; ++j) {
    const auto ji = static_cast<std::uint64_t>(j);
    const std::size_t task = derive_seed(cfg.seed, {detail::kTagEvalPrompt, 0, ji}) % cfg.tasks.size();
    prompts.push_back(
        env::make_prompt(cfg.tasks[task], derive_seed(cfg.seed, {detail::kTagEvalPrompt, 1, ji})));
  }
  return prompts;
}

inline std::vector<TokenId> greedy_decode(const PolicyParams& params, const env::Prompt& prompt) {
  std::vector<TokenId> out;
  for (int pos = 0; pos < prompt.task.max_len; ++pos) {
    auto z = logits(params, featurize(params.feature_spec(), prompt.tokens, out));
    mask_logits(z, env::allowed_tokens(prompt, pos));
    const auto best = static_cast<TokenId>(std::max_element(z.begin(), z.end()) - z.begin());
    out.push_back(best);
    if (best == env::kEos) break;
  }
  return out;
}

struct EvalResult {
  double sampled_accuracy = 0.0;
  double greedy_accuracy = 0.0;
};

inline EvalResult evaluate(const PolicyParams& params, const TrainConfig& cfg,
                           std::span<const env::Prompt> prompts, int step) {
  EvalResult r;
  if (prompts.empty()) return r;
  SamplerParams p = cfg.sampler;
  p.mode = TemperatureMode::kFixed;
  p.t_base = cfg.eval.temperature;
  std::size_t sampled = 0, greedy = 0;
  for (std::size_t j = 0; j < prompts.size(); ++j) {
    greedy += static_cast<std::size_t>(env::score(prompts[j], greedy_decode(params, prompts[j])));
    for (int k = 0; k < cfg.eval.samples; ++k) {
      const auto seq = rollout_sequence(
          params, prompts[j], p, std::nullopt,
          derive_seed(cfg.seed, {detail::kTagEvalSample, static_cast<std::uint64_t>(step), j,
                                 static_cast<std::uint64_t>(k)}));
      sampled += static_cast<std::size_t>(env::score(prompts[j], response_tokens(seq)));
    }
  }
  r.sampled_accuracy =
      static_cast<double>(sampled) / static_cast<double>(prompts.size() * cfg.eval.samples);
  r.greedy_accuracy = static_cast<double>(greedy) / static_cast<double>(prompts.size());
  return r;
}

}  // namespace hapo

#endif  // HAPO_TRAINER_HPP_
