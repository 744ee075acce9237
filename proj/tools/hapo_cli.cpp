// hapo: command-line front end.
//
//   hapo train   [--config PATH] [--seed N] [--algo NAME] [--steps N] [--out DIR] [--set k=v]...
//   hapo ablate  [same flags] --components LETTERS [--components LETTERS]...
//   hapo analyze TRACE --report NAME [--out FILE]
//   hapo compare DIR DIR... [--out FILE]
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error.
// HAPO_OUT_ROOT sets the parent directory of runs without --out (default "runs").

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hapo/hapo.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> algo;
  std::optional<int> steps;
  std::string out;
  std::vector<std::string> sets;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "Run config file (JSON)");
  cmd->add_option("--seed", f.seed, "Override the run seed");
  cmd->add_option("--algo", f.algo, "Override the algorithm (grpo, dapo, dapo_fork, hapo)");
  cmd->add_option("--steps", f.steps, "Override total_steps");
  cmd->add_option("--out", f.out, "Run directory (train) or parent directory (ablate)");
  cmd->add_option("--set", f.sets, "Override a config key: dotted.key=value (repeatable)");
}

std::vector<std::string> overrides_of(const RunFlags& f) {
  std::vector<std::string> o = f.sets;
  if (f.seed) o.push_back("seed=" + std::to_string(*f.seed));
  if (f.algo) o.push_back("algo=\"" + *f.algo + "\"");
  if (f.steps) o.push_back("total_steps=" + std::to_string(*f.steps));
  return o;
}

std::filesystem::path out_root() {
  const char* env = std::getenv("HAPO_OUT_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

std::string default_run_name(const hapo::TrainConfig& cfg) {
  std::string name = hapo::to_string(cfg.algo);
  if (cfg.components) name += "-" + (cfg.components->empty() ? std::string("none") : *cfg.components);
  return name + "-seed" + std::to_string(cfg.seed);
}

int cmd_train(const RunFlags& f) {
  const hapo::TrainConfig cfg = hapo::load_config(f.config, overrides_of(f));
  const std::filesystem::path dir =
      f.out.empty() ? out_root() / default_run_name(cfg) : std::filesystem::path(f.out);
  hapo::run(cfg, dir);
  std::cout << dir.string() << '\n';
  return 0;
}

int cmd_ablate(const RunFlags& f, const std::vector<std::string>& combos) {
  if (combos.empty()) throw hapo::ConfigError("ablate needs at least one --components value");
  std::vector<std::string> letters;
  for (const auto& c : combos) {
    const std::string l = (c == "none" || c == "-") ? std::string() : c;
    hapo::components_from_letters(l);
    letters.push_back(l);
  }
  const std::filesystem::path root = f.out.empty() ? out_root() : std::filesystem::path(f.out);
  for (const auto& l : letters) {
    auto overrides = overrides_of(f);
    overrides.push_back("components=\"" + l + "\"");
    const hapo::TrainConfig cfg = hapo::load_config(f.config, overrides);
    const auto dir = root / ("ablate-" + (l.empty() ? std::string("none") : l) + "-seed" +
                             std::to_string(cfg.seed));
    hapo::run(cfg, dir);
    std::cout << dir.string() << '\n';
  }
  return 0;
}

int cmd_analyze(const std::string& trace, const std::string& report, const std::string& out) {
  const hapo::analysis::Trace t = hapo::analysis::read_trace(trace);
  const std::string text = hapo::analysis::run_report(t, report);
  const std::string path = out.empty() ? trace + "." + report + ".tsv" : out;
  std::ofstream file(path);
  if (!file) throw hapo::RunError("cannot write report '" + path + "'");
  file << text;
  std::cout << path << '\n';
  return 0;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
  const std::string table = hapo::format_compare(hapo::compare_runs(paths));
  if (out.empty()) {
    std::cout << table;
  } else {
    std::ofstream file(out);
    if (!file) throw hapo::RunError("cannot write '" + out + "'");
    file << table;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous adaptive policy optimization lab"};
  app.require_subcommand(1);

  RunFlags train_flags;
  auto* train = app.add_subcommand("train", "Train one run");
  add_run_flags(train, train_flags);

  RunFlags ablate_flags;
  std::vector<std::string> combos;
  auto* ablate = app.add_subcommand("ablate", "One run per component combination (A/B/C/D)");
  add_run_flags(ablate, ablate_flags);
  ablate->add_option("--components", combos,
                     "Subset of ABCD ('none' for the plain pipeline); repeatable");

  std::string trace_path, report, analyze_out;
  auto* analyze = app.add_subcommand("analyze", "Aggregate a trace file into a report");
  analyze->add_option("trace", trace_path, "trace.jsonl path")->required();
  analyze->add_option("--report", report,
                      "clip_patterns | ratio_entropy | dual_entropy | entropy_landscape")
      ->required();
  analyze->add_option("--out", analyze_out, "Report path (default TRACE.REPORT.tsv)");

  std::vector<std::string> dirs;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "Summarize several run directories");
  compare->add_option("dirs", dirs, "Run directories")->required();
  compare->add_option("--out", compare_out, "Write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_flags);
    if (*ablate) return cmd_ablate(ablate_flags, combos);
    if (*analyze) return cmd_analyze(trace_path, report, analyze_out);
    if (*compare) return cmd_compare(dirs, compare_out);
  } catch (const hapo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
