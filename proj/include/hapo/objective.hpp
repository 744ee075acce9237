#ifndef HAPO_OBJECTIVE_HPP_
#define HAPO_OBJECTIVE_HPP_

// Mini-batch surrogate objective and its closed-form gradient.
//
// For every token the live policy gives r = pi(a)/pi_old(a) at the base
// temperature. Advantages are treated as constants w.r.t. the parameters
// (they depend on r only through the piecewise-constant neutral-zone test),
// so d/dW [w * min(r A, clip(r) A)] = w * [unclipped selected] * A * r * dlog pi / dW.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "hapo/advantage.hpp"
#include "hapo/common.hpp"
#include "hapo/loss.hpp"
#include "hapo/policy.hpp"

namespace hapo {

struct UpdateToken {
  ContextFeatures features;
  TokenId token = 0;
  std::vector<TokenId> allowed;  // empty: whole vocabulary
  double old_log_prob = 0.0;
  double entropy = 0.0;
  double h_tilde = 0.0;
  double advantage = 0.0;  // A (or the pre-norm A-hat when redistribution ran before)
  bool keep = true;        // forking mask
};

struct ObjectiveSettings {
  Algorithm loss_algo = Algorithm::kDapo;
  ClipBounds clip;
  RedistributionParams redistribution;  // mode kOff: no in-minibatch redistribution
  double temperature = 1.0;
  bool use_mask = false;
  bool exclude_masked_from_denominator = true;
};

struct TokenOutcome {
  double ratio = 1.0;
  double redistributed = 0.0;
  TokenBounds bounds;
  SurrogateTerm term;
};

struct MinibatchOutcome {
  double loss = 0.0;
  std::vector<TokenOutcome> tokens;
  std::optional<Gradient> gradient;
};

inline MinibatchOutcome evaluate_minibatch(const PolicyParams& live,
                                           std::span<const UpdateToken> tokens,
                                           std::span<const std::size_t> lengths,
                                           const ObjectiveSettings& s, bool with_gradient = true) {
  std::vector<bool> mask;
  if (s.use_mask) {
    mask.reserve(tokens.size());
    for (const auto& t : tokens) mask.push_back(t.keep);
  }
  const std::vector<double> weights =
      token_weights(s.loss_algo, lengths, mask, s.exclude_masked_from_denominator);
  if (weights.size() != tokens.size()) throw ConfigError("layout does not match token count");

  MinibatchOutcome out;
  out.tokens.resize(tokens.size());
  if (with_gradient) out.gradient.emplace(live);
  std::vector<double> terms(tokens.size(), 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const UpdateToken& tok = tokens[i];
    std::vector<double> z = logits(live, tok.features);
    mask_logits(z, tok.allowed);
    const Distribution d = softmax(z, s.temperature);
    TokenOutcome& o = out.tokens[i];
    o.ratio = std::exp(d.log_probs[static_cast<std::size_t>(tok.token)] - tok.old_log_prob);
    o.bounds = clip_bounds(tok.h_tilde, s.clip);
    const NeutralZone zone = neutral_zone(o.bounds.eps_left, o.bounds.eps_right);
    o.redistributed =
        tok.advantage * redistribution_factor(tok.h_tilde, o.ratio, zone, s.redistribution);
    o.term = token_surrogate(o.ratio, o.redistributed, o.bounds.eps_left, o.bounds.eps_right);
    if (weights[i] == 0.0) continue;
    terms[i] = weights[i] * o.term.value;
    if (with_gradient && o.term.ratio_grad != 0.0) {
      out.gradient->add_log_prob_term(tok.features, d.probs, tok.token, s.temperature,
                                      weights[i] * o.term.ratio_grad * o.ratio);
    }
  }
  out.loss = stable_sum(terms);
  return out;
}

}  // namespace hapo

#endif  // HAPO_OBJECTIVE_HPP_
