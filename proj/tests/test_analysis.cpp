#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "hapo/analysis.hpp"

namespace an = hapo::analysis;

namespace {

std::vector<std::vector<std::string>> table_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream cs(line);
    std::string cell;
    while (std::getline(cs, cell, '\t')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

an::UpdateRow update(double h, double h_tilde, bool left, bool right, int mb = 0, int num = 1,
                     double ratio = 1.0) {
  an::UpdateRow u;
  u.minibatch = mb;
  u.num_minibatches = num;
  u.entropy = h;
  u.h_tilde = h_tilde;
  u.ratio = ratio;
  u.clip_left = left;
  u.clip_right = right;
  return u;
}

}  // namespace

TEST(Analysis, UniformRolloutIsOneLandscapeBin) {
  an::Trace t;
  const double log_v = std::log(16.0);
  for (int i = 0; i < 50; ++i) t.rollout.push_back({i % 16, log_v, -log_v});
  const auto rows = table_rows(an::entropy_landscape(t));
  ASSERT_EQ(rows.size(), 1U);
  EXPECT_EQ(rows[0][3], "50");
  EXPECT_NEAR(std::stod(rows[0][1]), log_v, 1e-5);
  EXPECT_NEAR(std::stod(rows[0][5]), 1.0 / 16.0, 1e-6);
}

TEST(Analysis, LandscapeFractionsSumToOne) {
  an::Trace t;
  for (int i = 0; i < 97; ++i) t.rollout.push_back({i % 5, 0.03 * i, -0.5});
  double total = 0.0;
  for (const auto& r : table_rows(an::entropy_landscape(t))) total += std::stod(r[4]);
  EXPECT_NEAR(total, 1.0, 1e-4);
}

TEST(Analysis, LeftClipsOnNonPositiveHTildeStayInLowClass) {
  an::Trace t;
  for (int i = 0; i < 40; ++i) {
    const double h = 0.05 * i;
    const double h_tilde = i < 20 ? -0.5 : 0.5;
    t.update.push_back(update(h, h_tilde, h_tilde <= 0.0 && i % 2 == 0, h_tilde > 0.0));
  }
  std::size_t high_left = 0, low_left = 0;
  for (const auto& r : table_rows(an::clip_patterns(t))) {
    if (r[1] == "high") high_left += std::stoul(r[3]);
    if (r[1] == "low") low_left += std::stoul(r[3]);
  }
  EXPECT_EQ(high_left, 0U);
  EXPECT_EQ(low_left, 10U);
}

TEST(Analysis, DualEntropyRanksWidestSpreadFirst) {
  an::Trace t;
  t.rollout.push_back({7, 0.01, -0.1});
  t.rollout.push_back({7, 2.0, -2.0});
  t.rollout.push_back({3, 1.0, -1.0});
  t.rollout.push_back({3, 1.2, -1.0});
  t.rollout.push_back({9, 0.5, -1.0});
  const auto rows = table_rows(an::dual_entropy(t));
  ASSERT_EQ(rows.size(), 3U);
  EXPECT_EQ(rows[0][1], "7");
  EXPECT_NEAR(std::stod(rows[0][5]), 1.99, 1e-9);
  EXPECT_EQ(rows[1][1], "3");
  EXPECT_EQ(rows[2][1], "9");
}

TEST(Analysis, RatioEntropySkipsFirstHalfOfMinibatches) {
  an::Trace t;
  for (int mb = 0; mb < 4; ++mb) {
    for (int i = 0; i < 10; ++i) t.update.push_back(update(0.1 * i, 0.0, false, false, mb, 4,
                                                           mb < 2 ? 1.0 : 1.12));
  }
  std::size_t count = 0;
  for (const auto& r : table_rows(an::ratio_entropy(t))) {
    EXPECT_EQ(r[1], "1.1");
    count += std::stoul(r[3]);
  }
  EXPECT_EQ(count, 20U);

  an::Trace first_only;
  first_only.update.push_back(update(0.1, 0.0, false, false, 0, 2));
  EXPECT_THROW(an::ratio_entropy(first_only), hapo::RunError);
}

TEST(Analysis, EmptyAndMalformedTracesError) {
  std::istringstream empty("");
  EXPECT_THROW(an::parse_trace(empty), hapo::RunError);
  std::istringstream bad("{\"kind\": \"rollout\", \"token\": 1}\n");
  EXPECT_THROW(an::parse_trace(bad), hapo::RunError);
  EXPECT_THROW(an::read_trace("/nonexistent/trace.jsonl"), hapo::RunError);
  an::Trace t;
  t.update.push_back(update(0.1, 0.0, false, false));
  EXPECT_THROW(an::entropy_landscape(t), hapo::RunError);
  EXPECT_THROW(an::run_report(t, "histogram"), hapo::ConfigError);
}

TEST(Analysis, ParsesBothRecordKindsAndIgnoresOthers) {
  std::istringstream in(
      R"({"kind":"rollout","step":0,"token":4,"H":0.5,"T":1.0,"old_log_prob":-0.7})"
      "\n"
      R"({"kind":"note"})"
      "\n"
      R"({"kind":"update","mb":1,"num_mb":2,"H":0.5,"h_tilde":-0.2,"ratio":1.01,"clip_l":true,"clip_r":false})"
      "\n");
  const an::Trace t = an::parse_trace(in);
  ASSERT_EQ(t.rollout.size(), 1U);
  ASSERT_EQ(t.update.size(), 1U);
  EXPECT_EQ(t.rollout[0].token, 4);
  EXPECT_TRUE(t.update[0].clip_left);
  EXPECT_EQ(t.update[0].minibatch, 1);
}

TEST(Analysis, ReportsAreDeterministic) {
  an::Trace t;
  std::uint64_t x = 88172645463325252ULL;
  auto next = [&] {
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    return static_cast<double>(x % 100000) / 100000.0;
  };
  for (int i = 0; i < 300; ++i) {
    t.rollout.push_back({static_cast<int>(next() * 16), 2.7 * next(), -3.0 * next()});
    t.update.push_back(update(2.7 * next(), next() - 0.5, next() < 0.1, next() < 0.1, i % 4, 4,
                              0.5 + next()));
  }
  for (const char* report : {"entropy_landscape", "dual_entropy", "clip_patterns",
                             "ratio_entropy"}) {
    EXPECT_EQ(an::run_report(t, report), an::run_report(t, report)) << report;
  }
}
