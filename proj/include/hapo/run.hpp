#ifndef HAPO_RUN_HPP_
#define HAPO_RUN_HPP_

// Run directory layout:
//   config.json             full config snapshot (every key explicit)
//   metrics.jsonl           one StepMetrics record per line, append-only
//   trace.jsonl             per-token rollout/update records (trace = true)
//   checkpoints/step_NNNNNN.ckpt
//   summary.json            written when the run completes

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hapo/config.hpp"
#include "hapo/trainer.hpp"

namespace hapo {

inline constexpr const char* kMetricsSchema = "hapo.metrics/1";

namespace detail {
inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }
}  // namespace detail

inline Json to_json(const StepMetrics& m) {
  using detail::optional_json;
  Json j;
  j["schema"] = kMetricsSchema;
  j["step"] = m.step;
  j["skipped"] = m.skipped;
  j["groups_total"] = m.groups_total;
  j["groups_kept"] = m.groups_kept;
  j["mean_reward"] = m.mean_reward;
  j["eval_accuracy"] = optional_json(m.eval_accuracy);
  j["eval_greedy_accuracy"] = optional_json(m.eval_greedy_accuracy);
  j["mean_response_length"] = m.mean_response_length;
  j["max_response_length"] = m.max_response_length;
  j["mean_entropy"] = m.mean_entropy;
  j["entropy_quantile"] = m.entropy_quantile;
  j["entropy_sigma"] = m.entropy_sigma;
  j["h_max"] = m.h_max;
  j["h_min"] = m.h_min;
  j["stats_degenerate"] = m.stats_degenerate;
  j["prior_quantile"] = m.prior_present ? Json(m.prior_quantile) : Json(nullptr);
  j["prior_sigma"] = m.prior_present ? Json(m.prior_sigma) : Json(nullptr);
  j["adv_mean"] = optional_json(m.adv_mean);
  j["adv_max"] = optional_json(m.adv_max);
  j["adv_min"] = optional_json(m.adv_min);
  j["adv_positive"] = m.adv_positive;
  j["adv_negative"] = m.adv_negative;
  j["clip_left_high"] = m.clip_left_high;
  j["clip_left_low"] = m.clip_left_low;
  j["clip_right_high"] = m.clip_right_high;
  j["clip_right_low"] = m.clip_right_low;
  j["critical_tokens"] = m.critical_tokens;
  j["critical_mean_entropy"] = optional_json(m.critical_mean_entropy);
  j["loss"] = optional_json(m.loss);
  j["learning_rate"] = m.learning_rate;
  j["first_minibatch_ratio_dev"] = optional_json(m.first_minibatch_ratio_dev);
  j["events"] = m.events;
  return j;
}

// Token-level trace sink. Lines are written in the order events arrive,
// which is deterministic for a fixed config.
class TraceWriter {
 public:
  explicit TraceWriter(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw RunError("cannot open trace file " + path.string());
  }

  StepObserver observer() {
    StepObserver obs;
    obs.on_rollout = [this](const RolloutTokenEvent& e) {
      Json j;
      j["kind"] = "rollout";
      j["step"] = e.step;
      j["prompt_id"] = e.prompt_id;
      j["seq"] = e.sequence;
      j["pos"] = e.record.position;
      j["token"] = e.record.token;
      j["H"] = e.record.entropy;
      j["T"] = e.record.temperature;
      j["old_log_prob"] = e.record.old_log_prob;
      out_ << j.dump() << '\n';
    };
    obs.on_update = [this](const UpdateTokenEvent& e) {
      Json j;
      j["kind"] = "update";
      j["step"] = e.step;
      j["mb"] = e.minibatch;
      j["num_mb"] = e.num_minibatches;
      j["prompt_id"] = e.prompt_id;
      j["seq"] = e.sequence;
      j["pos"] = e.position;
      j["token"] = e.token.token;
      j["H"] = e.token.entropy;
      j["h_tilde"] = e.token.h_tilde;
      j["ratio"] = e.outcome.ratio;
      j["adv"] = e.token.advantage;
      j["adv_hat"] = e.outcome.redistributed;
      j["eps_l"] = e.outcome.bounds.eps_left;
      j["eps_r"] = e.outcome.bounds.eps_right;
      j["clip_l"] = e.outcome.term.clipped_left;
      j["clip_r"] = e.outcome.term.clipped_right;
      out_ << j.dump() << '\n';
    };
    return obs;
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

inline std::string checkpoint_name(int step) {
  std::ostringstream s;
  s << "step_" << std::setw(6) << std::setfill('0') << step << ".ckpt";
  return s.str();
}

inline void save_checkpoint(const std::filesystem::path& dir, const TrainState& state) {
  std::filesystem::create_directories(dir / "checkpoints");
  const auto path = dir / "checkpoints" / checkpoint_name(state.step);
  std::ofstream out(path);
  if (!out) throw RunError("cannot write checkpoint " + path.string());
  write_checkpoint(out, state.params);
  if (!out) throw RunError("failed writing checkpoint " + path.string());
}

struct RunSummary {
  int steps = 0;
  int skipped_steps = 0;
  std::optional<double> final_eval_accuracy;
  std::optional<double> best_eval_accuracy;
  std::optional<double> final_greedy_accuracy;
  double final_mean_entropy = 0.0;
  double final_mean_response_length = 0.0;
  double final_mean_reward = 0.0;
};

inline Json to_json(const RunSummary& s) {
  using detail::optional_json;
  Json j;
  j["schema"] = kMetricsSchema;
  j["steps"] = s.steps;
  j["skipped_steps"] = s.skipped_steps;
  j["final_eval_accuracy"] = optional_json(s.final_eval_accuracy);
  j["best_eval_accuracy"] = optional_json(s.best_eval_accuracy);
  j["final_greedy_accuracy"] = optional_json(s.final_greedy_accuracy);
  j["final_mean_entropy"] = s.final_mean_entropy;
  j["final_mean_response_length"] = s.final_mean_response_length;
  j["final_mean_reward"] = s.final_mean_reward;
  return j;
}

inline bool is_eval_step(const TrainConfig& cfg, int step) {
  if (step + 1 == cfg.total_steps) return true;
  return cfg.eval.interval > 0 && (step + 1) % cfg.eval.interval == 0;
}

// Executes cfg.total_steps steps, writing everything under `dir`. Returns the
// summary; I/O failures surface as RunError.
inline RunSummary run(const TrainConfig& cfg, const std::filesystem::path& dir) {
  validate(cfg);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw RunError("cannot create run directory " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "config.json");
    if (!out) throw RunError("cannot write " + (dir / "config.json").string());
    out << to_json(cfg).dump(2) << '\n';
  }
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw RunError("cannot write " + (dir / "metrics.jsonl").string());
  std::optional<TraceWriter> trace;
  StepObserver observer;
  if (cfg.trace) {
    trace.emplace(dir / "trace.jsonl");
    observer = trace->observer();
  }

  TrainState state = initial_state(cfg);
  save_checkpoint(dir, state);
  const std::vector<env::Prompt> held_out = eval_prompts(cfg);

  RunSummary summary;
  for (int s = 0; s < cfg.total_steps; ++s) {
    StepMetrics m = train_step(state, cfg, cfg.trace ? &observer : nullptr);
    if (is_eval_step(cfg, m.step)) {
      const EvalResult e = evaluate(state.params, cfg, held_out, m.step);
      m.eval_accuracy = e.sampled_accuracy;
      m.eval_greedy_accuracy = e.greedy_accuracy;
      summary.final_eval_accuracy = e.sampled_accuracy;
      summary.final_greedy_accuracy = e.greedy_accuracy;
      if (!summary.best_eval_accuracy || e.sampled_accuracy > *summary.best_eval_accuracy) {
        summary.best_eval_accuracy = e.sampled_accuracy;
      }
    }
    metrics << to_json(m).dump() << '\n';
    metrics.flush();
    if (!metrics) throw RunError("failed writing metrics stream");
    if (trace) trace->flush();
    summary.steps = m.step + 1;
    if (m.skipped) ++summary.skipped_steps;
    summary.final_mean_entropy = m.mean_entropy;
    summary.final_mean_response_length = m.mean_response_length;
    summary.final_mean_reward = m.mean_reward;
    if ((cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0) ||
        s + 1 == cfg.total_steps) {
      save_checkpoint(dir, state);
    }
  }
  std::ofstream out(dir / "summary.json");
  if (!out) throw RunError("cannot write summary.json");
  out << to_json(summary).dump(2) << '\n';
  return summary;
}

// Reads a metrics stream up to the last complete record. A trailing partial
// line (crashed run) is ignored.
inline std::vector<Json> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RunError("missing metrics file " + path.string());
  std::vector<Json> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      records.push_back(Json::parse(line));
    } catch (const nlohmann::json::exception&) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw RunError("corrupt metrics record in " + path.string());
    }
  }
  return records;
}

struct CompareRow {
  std::string run;
  std::string algo;
  int steps = 0;
  std::optional<double> final_eval_accuracy;
  std::optional<double> best_eval_accuracy;
  double mean_length = 0.0;
  double mean_entropy = 0.0;
};

// One row per run directory, sorted by directory path. mean_length and
// mean_entropy are those of the final recorded step.
inline std::vector<CompareRow> compare_runs(std::vector<std::filesystem::path> dirs) {
  if (dirs.size() < 2) throw RunError("compare needs at least two run directories");
  std::sort(dirs.begin(), dirs.end());
  std::vector<CompareRow> rows;
  for (const auto& dir : dirs) {
    const auto metrics_path = dir / "metrics.jsonl";
    if (!std::filesystem::exists(metrics_path)) {
      throw RunError("run directory " + dir.string() + " has no metrics.jsonl");
    }
    const auto records = read_metrics(metrics_path);
    CompareRow row;
    row.run = dir.string();
    if (std::ifstream cfg_in(dir / "config.json"); cfg_in) {
      try {
        const Json cfg = Json::parse(cfg_in);
        row.algo = cfg.value("algo", "");
        if (cfg.contains("components") && cfg["components"].is_string()) {
          row.algo += "[" + cfg["components"].get<std::string>() + "]";
        }
      } catch (const nlohmann::json::exception&) {
        throw RunError("run directory " + dir.string() + " has an unreadable config.json");
      }
    }
    for (const auto& r : records) {
      if (r.value("schema", "") != kMetricsSchema) {
        throw RunError("metrics schema mismatch in " + dir.string());
      }
      row.steps = r["step"].get<int>() + 1;
      row.mean_length = r["mean_response_length"].get<double>();
      row.mean_entropy = r["mean_entropy"].get<double>();
      if (!r["eval_accuracy"].is_null()) {
        const double acc = r["eval_accuracy"].get<double>();
        row.final_eval_accuracy = acc;
        if (!row.best_eval_accuracy || acc > *row.best_eval_accuracy) row.best_eval_accuracy = acc;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_compare(const std::vector<CompareRow>& rows) {
  auto num = [](std::optional<double> v) {
    if (!v) return std::string("null");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "run\talgo\tsteps\tfinal_eval_accuracy\tbest_eval_accuracy\tmean_length\tmean_entropy\n";
  for (const auto& r : rows) {
    out << r.run << '\t' << r.algo << '\t' << r.steps << '\t' << num(r.final_eval_accuracy) << '\t'
        << num(r.best_eval_accuracy) << '\t' << num(r.mean_length) << '\t' << num(r.mean_entropy)
        << '\n';
  }
  return out.str();
}

}  // namespace hapo

#endif  // HAPO_RUN_HPP_
