#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "hapo/policy.hpp"

using hapo::ContextFeatures;
using hapo::FeatureSpec;
using hapo::PolicyParams;
using hapo::TokenId;

namespace {

PolicyParams random_params(int vocab, std::uint64_t seed, double scale = 1.0) {
  FeatureSpec fs;
  fs.buckets = 64;
  PolicyParams p(fs, vocab);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (double& w : p.weights()) w = n(rng);
  return p;
}

ContextFeatures some_context(const PolicyParams& p, std::uint64_t seed) {
  const std::vector<TokenId> prompt{2, 5, 7};
  std::vector<TokenId> prefix;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < static_cast<int>(seed % 5); ++i) {
    prefix.push_back(static_cast<TokenId>(rng() % static_cast<std::uint64_t>(p.vocab_size())));
  }
  return hapo::featurize(p.feature_spec(), prompt, prefix);
}

}  // namespace

TEST(Featurize, AtMostWindowActiveSortedUnique) {
  FeatureSpec fs;
  fs.buckets = 8;
  const std::vector<TokenId> prompt{2, 3};
  for (int len = 0; len < 6; ++len) {
    std::vector<TokenId> prefix(static_cast<std::size_t>(len), 4);
    const auto ctx = hapo::featurize(fs, prompt, prefix);
    ASSERT_LE(ctx.active.size(), 3u);
    ASSERT_FALSE(ctx.active.empty());
    for (std::size_t i = 1; i < ctx.active.size(); ++i) ASSERT_LT(ctx.active[i - 1], ctx.active[i]);
    for (auto f : ctx.active) ASSERT_LT(f, 8u);
  }
}

TEST(Featurize, DependsOnPosition) {
  FeatureSpec fs;
  const std::vector<TokenId> prompt{2, 3};
  const std::vector<TokenId> a{4, 4, 4};
  const std::vector<TokenId> b{4, 4, 4, 4};
  EXPECT_NE(hapo::featurize(fs, prompt, a), hapo::featurize(fs, prompt, b));
}

TEST(Forward, ZeroLogitsAreUniform) {
  const auto d = hapo::softmax(std::vector<double>(16, 0.0));
  for (double lp : d.log_probs) EXPECT_NEAR(lp, -std::log(16.0), 1e-15);
  EXPECT_NEAR(d.entropy, std::log(16.0), 1e-12);
}

TEST(Forward, ProbabilitiesNormalizeAndEntropyInRange) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = random_params(12, seed, 1.0 + static_cast<double>(seed % 7) * 10.0);
    const auto d = hapo::softmax(hapo::logits(p, some_context(p, seed)));
    double total = 0.0;
    for (double lp : d.log_probs) total += std::exp(lp);
    ASSERT_NEAR(total, 1.0, 1e-12);
    ASSERT_GE(d.entropy, 0.0);
    ASSERT_LE(d.entropy, std::log(12.0));
  }
}

TEST(Forward, HugeLogitsStayFinite) {
  std::vector<double> z{1e300, -1e300, 0.0, 1e300};
  const auto d = hapo::softmax(z);
  for (double p : d.probs) EXPECT_TRUE(std::isfinite(p));
  EXPECT_NEAR(d.probs[0] + d.probs[3], 1.0, 1e-12);
}

TEST(Forward, MaskedLogitsConfineMass) {
  std::vector<double> z{0.3, -1.0, 2.0, 0.5};
  const std::vector<TokenId> allowed{1, 3};
  hapo::mask_logits(z, allowed);
  const auto d = hapo::softmax(z);
  EXPECT_EQ(d.probs[0], 0.0);
  EXPECT_EQ(d.probs[2], 0.0);
  EXPECT_NEAR(d.probs[1] + d.probs[3], 1.0, 1e-15);
  std::vector<double> single{0.0, 0.0};
  hapo::mask_logits(single, std::vector<TokenId>{1});
  EXPECT_EQ(hapo::softmax(single).entropy, 0.0);
}

TEST(Forward, TokenOutsideVocabIsAnError) {
  const auto p = random_params(6, 1);
  EXPECT_THROW(hapo::log_prob_and_entropy(p, some_context(p, 1), 6), hapo::ConfigError);
}

TEST(Gradient, RowsSumToZero) {
  const auto p = random_params(9, 4);
  const auto g = hapo::grad_log_prob(p, some_context(p, 3), 2);
  const auto V = static_cast<std::size_t>(g.vocab_size);
  for (std::size_t r = 0; r < g.rows.size(); ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < V; ++k) s += g.values[r * V + k];
    EXPECT_NEAR(s, 0.0, 1e-12);
  }
}

TEST(Gradient, UniformPolicyClosedForm) {
  FeatureSpec fs;
  fs.buckets = 32;
  PolicyParams p(fs, 4);
  const auto ctx = hapo::featurize(fs, std::vector<TokenId>{1}, std::vector<TokenId>{});
  const auto g = hapo::grad_log_prob(p, ctx, 0);
  EXPECT_NEAR(g.values[0], 0.75, 1e-15);
  EXPECT_NEAR(g.values[1], -0.25, 1e-15);
}

// Central finite differences of log pi(a) w.r.t. every weight in the active
// rows, at several temperatures.
TEST(Gradient, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto p = random_params(7, seed + 100);
    const auto ctx = some_context(p, seed);
    const auto token = static_cast<TokenId>(seed % 7);
    const double T = 0.5 + static_cast<double>(seed % 4) * 0.4;
    const auto g = hapo::grad_log_prob(p, ctx, token, T);
    const auto V = static_cast<std::size_t>(p.vocab_size());
    double max_err = 0.0, max_ref = 0.0;
    for (std::size_t r = 0; r < g.rows.size(); ++r) {
      for (std::size_t k = 0; k < V; ++k) {
        double& w = p.row(g.rows[r])[k];
        const double saved = w;
        const double h = 1e-5;
        w = saved + h;
        const double up = hapo::log_prob_and_entropy(p, ctx, token, T).log_prob;
        w = saved - h;
        const double down = hapo::log_prob_and_entropy(p, ctx, token, T).log_prob;
        w = saved;
        const double fd = (up - down) / (2 * h);
        max_err = std::max(max_err, std::abs(fd - g.values[r * V + k]));
        max_ref = std::max(max_ref, std::abs(fd));
      }
    }
    ASSERT_LT(max_err / max_ref, 1e-6) << "seed " << seed;
  }
}

TEST(Update, AscentIncreasesLogProb) {
  auto p = random_params(5, 9, 0.1);
  const auto ctx = some_context(p, 2);
  const double before = hapo::log_prob_and_entropy(p, ctx, 3).log_prob;
  hapo::Gradient g(p);
  const auto d = hapo::softmax(hapo::logits(p, ctx));
  g.add_log_prob_term(ctx, d.probs, 3, 1.0, 1.0);
  hapo::apply_update(p, g, 0.1);
  EXPECT_GT(hapo::log_prob_and_entropy(p, ctx, 3).log_prob, before);
}

TEST(Update, NonFiniteGradientLeavesParamsUntouched) {
  auto p = random_params(5, 9);
  const PolicyParams before = p;
  hapo::Gradient g(p);
  g.values()[3] = std::nan("");
  EXPECT_THROW(hapo::apply_update(p, g, 0.1), hapo::TrainingError);
  EXPECT_EQ(p, before);
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto p = random_params(11, 5);
  std::stringstream ss;
  hapo::write_checkpoint(ss, p);
  const auto q = hapo::read_checkpoint(ss);
  EXPECT_EQ(p, q);
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream ss("not a checkpoint");
  EXPECT_THROW(hapo::read_checkpoint(ss), hapo::RunError);
}

TEST(Snapshot, IsolatedFromLaterUpdates) {
  auto p = random_params(4, 1);
  const auto snap = hapo::snapshot(p);
  p.weights()[0] += 1.0;
  EXPECT_NE(snap.params().weights()[0], p.weights()[0]);
}
