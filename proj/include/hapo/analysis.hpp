#ifndef HAPO_ANALYSIS_HPP_
#define HAPO_ANALYSIS_HPP_

// Diagnostics over trace files. Each report is a pure function of the trace
// and renders as tab-separated text with '#' header lines that record bucket
// edges.
//
//   entropy_landscape  entropy histogram of rollout tokens with the mean
//                      sampled-token probability per bin
//   dual_entropy       per token id entropy spread (max - min), ranked
//   clip_patterns      left/right clip counts per entropy decile, split by
//                      the sign of h-tilde
//   ratio_entropy      2-D histogram of entropy decile x importance ratio,
//                      skipping the first half of each step's mini-batches

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hapo/common.hpp"

namespace hapo::analysis {

struct RolloutRow {
  int token = 0;
  double entropy = 0.0;
  double old_log_prob = 0.0;
};

struct UpdateRow {
  int minibatch = 0;
  int num_minibatches = 1;
  double entropy = 0.0;
  double h_tilde = 0.0;
  double ratio = 1.0;
  bool clip_left = false;
  bool clip_right = false;
};

struct Trace {
  std::vector<RolloutRow> rollout;
  std::vector<UpdateRow> update;
};

inline Trace parse_trace(std::istream& in) {
  Trace t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "rollout") {
        t.rollout.push_back({j.at("token").get<int>(), j.at("H").get<double>(),
                             j.at("old_log_prob").get<double>()});
      } else if (kind == "update") {
        t.update.push_back({j.at("mb").get<int>(), j.at("num_mb").get<int>(),
                            j.at("H").get<double>(), j.at("h_tilde").get<double>(),
                            j.at("ratio").get<double>(), j.at("clip_l").get<bool>(),
                            j.at("clip_r").get<bool>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw RunError("trace line " + std::to_string(lineno) + " is malformed: " + e.what());
    }
  }
  if (t.rollout.empty() && t.update.empty()) throw RunError("empty trace");
  return t;
}

inline Trace read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RunError("cannot read trace file '" + path + "'");
  return parse_trace(in);
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace detail {

inline std::string join_edges(const std::vector<double>& edges) {
  std::string s;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (i) s += ',';
    s += fmt(edges[i]);
  }
  return s;
}

// Decile edges (0, 10, ..., 100th percentile) of the given values.
inline std::vector<double> decile_edges(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  std::vector<double> edges;
  for (int p = 0; p <= 100; p += 10) edges.push_back(percentile_sorted(values, p));
  return edges;
}

// Bucket of v among decile edges: the last b with edges[b] <= v, capped at 9.
// Ties collapse onto the lowest bucket holding the value.
inline int decile_of(const std::vector<double>& edges, double v) {
  const auto it = std::upper_bound(edges.begin(), edges.end() - 1, v);
  const int b = static_cast<int>(it - edges.begin()) - 1;
  return std::clamp(b, 0, 9);
}

}  // namespace detail

inline std::string entropy_landscape(const Trace& t, int bins = 20) {
  if (t.rollout.empty()) throw RunError("entropy_landscape needs rollout records");
  double lo = t.rollout.front().entropy, hi = lo;
  for (const auto& r : t.rollout) {
    lo = std::min(lo, r.entropy);
    hi = std::max(hi, r.entropy);
  }
  std::vector<double> edges;
  if (hi == lo) {
    edges = {lo, hi};
  } else {
    for (int b = 0; b <= bins; ++b) edges.push_back(lo + (hi - lo) * b / bins);
  }
  const std::size_t nb = edges.size() - 1;
  std::vector<std::size_t> count(nb, 0);
  std::vector<double> prob_sum(nb, 0.0);
  for (const auto& r : t.rollout) {
    std::size_t b = 0;
    if (nb > 1) {
      b = std::min(nb - 1, static_cast<std::size_t>((r.entropy - lo) / (hi - lo) * nb));
    }
    ++count[b];
    prob_sum[b] += std::exp(r.old_log_prob);
  }
  std::ostringstream out;
  out << "# report: entropy_landscape\n# tokens: " << t.rollout.size()
      << "\n# edges: " << detail::join_edges(edges) << "\n";
  out << "bin\tentropy_lo\tentropy_hi\tcount\tfraction\tmean_token_prob\n";
  for (std::size_t b = 0; b < nb; ++b) {
    if (count[b] == 0) continue;
    out << b << '\t' << fmt(edges[b]) << '\t' << fmt(edges[b + 1]) << '\t' << count[b] << '\t'
        << fmt(static_cast<double>(count[b]) / static_cast<double>(t.rollout.size())) << '\t'
        << fmt(prob_sum[b] / static_cast<double>(count[b])) << '\n';
  }
  return out.str();
}

inline std::string dual_entropy(const Trace& t) {
  if (t.rollout.empty()) throw RunError("dual_entropy needs rollout records");
  struct Acc {
    std::size_t n = 0;
    double min = 0.0, max = 0.0, sum = 0.0;
  };
  std::map<int, Acc> per_token;
  for (const auto& r : t.rollout) {
    Acc& a = per_token[r.token];
    if (a.n == 0) {
      a.min = a.max = r.entropy;
    } else {
      a.min = std::min(a.min, r.entropy);
      a.max = std::max(a.max, r.entropy);
    }
    a.sum += r.entropy;
    ++a.n;
  }
  std::vector<std::pair<int, Acc>> rows(per_token.begin(), per_token.end());
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return (a.second.max - a.second.min) > (b.second.max - b.second.min);
  });
  std::ostringstream out;
  out << "# report: dual_entropy\n# ranked by entropy spread (max - min), ties by token id\n";
  out << "rank\ttoken\tcount\tmin_entropy\tmax_entropy\tspread\tmean_entropy\n";
  int rank = 1;
  for (const auto& [token, a] : rows) {
    out << rank++ << '\t' << token << '\t' << a.n << '\t' << fmt(a.min) << '\t' << fmt(a.max)
        << '\t' << fmt(a.max - a.min) << '\t' << fmt(a.sum / static_cast<double>(a.n)) << '\n';
  }
  return out.str();
}

inline std::string clip_patterns(const Trace& t) {
  if (t.update.empty()) throw RunError("clip_patterns needs update records");
  std::vector<double> h;
  for (const auto& u : t.update) h.push_back(u.entropy);
  const auto edges = detail::decile_edges(h);
  // [bucket][class]: class 0 = h_tilde <= 0, 1 = h_tilde > 0
  std::size_t tokens[10][2] = {}, left[10][2] = {}, right[10][2] = {};
  for (const auto& u : t.update) {
    const int b = detail::decile_of(edges, u.entropy);
    const int c = u.h_tilde > 0.0 ? 1 : 0;
    ++tokens[b][c];
    left[b][c] += u.clip_left ? 1 : 0;
    right[b][c] += u.clip_right ? 1 : 0;
  }
  std::ostringstream out;
  out << "# report: clip_patterns\n# tokens: " << t.update.size()
      << "\n# entropy decile edges: " << detail::join_edges(edges) << "\n";
  out << "decile\th_tilde_class\ttokens\tclip_left\tclip_right\tleft_rate\tright_rate\n";
  for (int b = 0; b < 10; ++b) {
    for (int c = 0; c < 2; ++c) {
      if (tokens[b][c] == 0) continue;
      const double n = static_cast<double>(tokens[b][c]);
      out << b << '\t' << (c ? "high" : "low") << '\t' << tokens[b][c] << '\t' << left[b][c]
          << '\t' << right[b][c] << '\t' << fmt(left[b][c] / n) << '\t' << fmt(right[b][c] / n)
          << '\n';
    }
  }
  return out.str();
}

inline const std::vector<double>& ratio_edges() {
  static const std::vector<double> edges{0.0, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0, 1.05,
                                         1.1, 1.2, 1.3, 1.5, 2.0, 1e300};
  return edges;
}

inline std::string ratio_entropy(const Trace& t) {
  std::vector<const UpdateRow*> rows;
  for (const auto& u : t.update) {
    if (2 * u.minibatch >= u.num_minibatches) rows.push_back(&u);
  }
  if (rows.empty()) throw RunError("ratio_entropy needs update records past the first half");
  std::vector<double> h;
  for (const auto* u : rows) h.push_back(u->entropy);
  const auto edges = detail::decile_edges(h);
  const auto& redges = ratio_edges();
  const std::size_t nr = redges.size() - 1;
  std::vector<std::vector<std::size_t>> grid(10, std::vector<std::size_t>(nr, 0));
  for (const auto* u : rows) {
    const int b = detail::decile_of(edges, u->entropy);
    const auto it = std::upper_bound(redges.begin(), redges.end() - 1, u->ratio);
    const std::size_t r =
        std::min(nr - 1, static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - redges.begin() - 1)));
    ++grid[static_cast<std::size_t>(b)][r];
  }
  std::ostringstream out;
  out << "# report: ratio_entropy\n# tokens: " << rows.size()
      << " (first half of each step's mini-batches excluded)\n# entropy decile edges: "
      << detail::join_edges(edges) << "\n# ratio edges: " << detail::join_edges(redges) << "\n";
  out << "decile\tratio_lo\tratio_hi\tcount\n";
  for (std::size_t b = 0; b < 10; ++b) {
    for (std::size_t r = 0; r < nr; ++r) {
      if (grid[b][r] == 0) continue;
      out << b << '\t' << fmt(redges[r]) << '\t' << fmt(redges[r + 1]) << '\t' << grid[b][r]
          << '\n';
    }
  }
  return out.str();
}

inline std::string run_report(const Trace& t, const std::string& report) {
  if (report == "entropy_landscape") return entropy_landscape(t);
  if (report == "dual_entropy") return dual_entropy(t);
  if (report == "clip_patterns") return clip_patterns(t);
  if (report == "ratio_entropy") return ratio_entropy(t);
  throw ConfigError("unknown report '" + report +
                    "' (expected clip_patterns, ratio_entropy, dual_entropy, entropy_landscape)");
}

}  // namespace hapo::analysis

#endif  // HAPO_ANALYSIS_HPP_
