#ifndef HAPO_CONFIG_HPP_
#define HAPO_CONFIG_HPP_

// Run configuration file (JSON, schema_version 1). Every key is optional;
// missing keys take the TrainConfig defaults, unknown keys are rejected with
// the dotted path of the offending key. The snapshot written into a run
// directory always spells out every key.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hapo/trainer.hpp"

namespace hapo {

using Json = nlohmann::ordered_json;

inline constexpr int kConfigSchemaVersion = 1;

namespace detail {

inline void reject_unknown(const Json& obj, const std::string& path,
                           std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) {
    throw ConfigError("'" + (path.empty() ? std::string("<root>") : path) +
                      "' must be an object");
  }
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!keys.contains(key)) {
      throw ConfigError("unknown config key '" + (path.empty() ? key : path + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const Json& obj, const std::string& path, const char* key, T& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + (path.empty() ? std::string(key) : path + "." + key) +
                      "' has the wrong type");
  }
}

template <typename T, typename Parse>
void read_enum(const Json& obj, const std::string& path, const char* key, T& out, Parse parse) {
  std::string text;
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  read(obj, path, key, text);
  try {
    out = parse(text);
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + (path.empty() ? std::string(key) : path + "." + key) +
                      "': " + e.what());
  }
}

template <typename T>
void read_optional(const Json& obj, const std::string& path, const char* key,
                   std::optional<T>& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if (it->is_null()) {
    out.reset();
    return;
  }
  T value{};
  read(obj, path, key, value);
  out = value;
}

}  // namespace detail

inline Json task_to_json(const env::TaskSpec& t) {
  Json j;
  j["kind"] = env::to_string(t.kind);
  j["vocab_size"] = t.vocab_size;
  j["max_len"] = t.max_len;
  j["target"] = t.target ? Json(*t.target) : Json(nullptr);
  j["choices"] = t.choices;
  j["bits"] = t.bits ? Json(*t.bits) : Json(nullptr);
  j["bit_count"] = t.bit_count;
  j["guided"] = t.guided;
  return j;
}

inline env::TaskSpec task_from_json(const Json& j, const std::string& path) {
  using detail::read;
  detail::reject_unknown(j, path,
                         {"kind", "vocab_size", "max_len", "target", "choices", "bits", "bit_count",
                          "guided"});
  env::TaskSpec t;
  detail::read_enum(j, path, "kind", t.kind, env::task_kind_from_string);
  read(j, path, "vocab_size", t.vocab_size);
  read(j, path, "max_len", t.max_len);
  detail::read_optional(j, path, "target", t.target);
  read(j, path, "choices", t.choices);
  detail::read_optional(j, path, "bits", t.bits);
  read(j, path, "bit_count", t.bit_count);
  read(j, path, "guided", t.guided);
  return t;
}

inline Json to_json(const TrainConfig& c) {
  Json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["algo"] = to_string(c.algo);
  j["components"] = c.components ? Json(*c.components) : Json(nullptr);
  j["seed"] = c.seed;
  j["total_steps"] = c.total_steps;
  j["batch_size"] = c.batch_size;
  j["num_minibatches"] = c.num_minibatches;
  j["learning_rate"] = c.learning_rate;
  j["warmup_steps"] = c.warmup_steps;
  j["rho"] = c.rho;
  j["advantage_scope"] = to_string(c.advantage_scope);
  j["grpo_epsilon"] = c.grpo_epsilon;
  j["force_zero_h_tilde"] = c.force_zero_h_tilde;
  j["bootstrap_stats"] = c.bootstrap_stats;
  j["workers"] = c.workers;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["trace"] = c.trace;
  j["features"] = {{"window", c.features.window},
                   {"buckets", c.features.buckets},
                   {"use_position", c.features.use_position},
                   {"condition_on_prompt", c.features.condition_on_prompt}};
  j["sampler"] = {{"mode", to_string(c.sampler.mode)},
                  {"t_base", c.sampler.t_base},
                  {"tau", c.sampler.tau},
                  {"threshold", c.sampler.threshold},
                  {"t_high", c.sampler.t_high},
                  {"t_low", c.sampler.t_low},
                  {"group_size", c.sampler.group_size},
                  {"max_len", c.sampler.max_len},
                  {"entropy_floor", c.sampler.entropy_floor}};
  j["redistribution"] = {{"mode", to_string(c.redistribution.mode)},
                         {"order", to_string(c.redistribution.order)},
                         {"alpha_high", c.redistribution.alpha_high},
                         {"alpha_low", c.redistribution.alpha_low}};
  j["clip"] = {{"mode", to_string(c.clip.mode)},
               {"eps_left_base", c.clip.eps_left_base},
               {"eps_right_base", c.clip.eps_right_base},
               {"eps_left_high", c.clip.eps_left_high},
               {"eps_right_high", c.clip.eps_right_high},
               {"eps_left_low", c.clip.eps_left_low},
               {"eps_right_low", c.clip.eps_right_low},
               {"eps_left_cap", c.clip.eps_left_cap}};
  j["fork"] = {{"rho", c.fork.rho},
               {"exclude_masked_from_denominator", c.fork.exclude_masked_from_denominator}};
  j["eval"] = {{"interval", c.eval.interval},
               {"prompts", c.eval.prompts},
               {"samples", c.eval.samples},
               {"temperature", c.eval.temperature}};
  Json tasks = Json::array();
  for (const auto& t : c.tasks) tasks.push_back(task_to_json(t));
  j["tasks"] = tasks;
  return j;
}

inline TrainConfig config_from_json(const Json& j) {
  using detail::read;
  using detail::read_enum;
  using detail::reject_unknown;
  reject_unknown(j, "",
                 {"schema_version", "algo", "components", "seed", "total_steps", "batch_size",
                  "num_minibatches", "learning_rate", "warmup_steps", "rho", "advantage_scope",
                  "grpo_epsilon", "force_zero_h_tilde", "bootstrap_stats", "workers",
                  "checkpoint_interval", "trace", "features", "sampler", "redistribution", "clip",
                  "fork", "eval", "tasks"});
  int version = kConfigSchemaVersion;
  read(j, "", "schema_version", version);
  if (version != kConfigSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(version));
  }
  TrainConfig c;
  read_enum(j, "", "algo", c.algo, algorithm_from_string);
  detail::read_optional(j, "", "components", c.components);
  read(j, "", "seed", c.seed);
  read(j, "", "total_steps", c.total_steps);
  read(j, "", "batch_size", c.batch_size);
  read(j, "", "num_minibatches", c.num_minibatches);
  read(j, "", "learning_rate", c.learning_rate);
  read(j, "", "warmup_steps", c.warmup_steps);
  read(j, "", "rho", c.rho);
  read_enum(j, "", "advantage_scope", c.advantage_scope, advantage_scope_from_string);
  read(j, "", "grpo_epsilon", c.grpo_epsilon);
  read(j, "", "force_zero_h_tilde", c.force_zero_h_tilde);
  read(j, "", "bootstrap_stats", c.bootstrap_stats);
  read(j, "", "workers", c.workers);
  read(j, "", "checkpoint_interval", c.checkpoint_interval);
  read(j, "", "trace", c.trace);

  if (const auto it = j.find("features"); it != j.end()) {
    reject_unknown(*it, "features", {"window", "buckets", "use_position", "condition_on_prompt"});
    read(*it, "features", "window", c.features.window);
    read(*it, "features", "buckets", c.features.buckets);
    read(*it, "features", "use_position", c.features.use_position);
    read(*it, "features", "condition_on_prompt", c.features.condition_on_prompt);
  }
  if (const auto it = j.find("sampler"); it != j.end()) {
    reject_unknown(*it, "sampler",
                   {"mode", "t_base", "tau", "threshold", "t_high", "t_low", "group_size",
                    "max_len", "entropy_floor"});
    read_enum(*it, "sampler", "mode", c.sampler.mode, temperature_mode_from_string);
    read(*it, "sampler", "t_base", c.sampler.t_base);
    read(*it, "sampler", "tau", c.sampler.tau);
    read(*it, "sampler", "threshold", c.sampler.threshold);
    read(*it, "sampler", "t_high", c.sampler.t_high);
    read(*it, "sampler", "t_low", c.sampler.t_low);
    read(*it, "sampler", "group_size", c.sampler.group_size);
    read(*it, "sampler", "max_len", c.sampler.max_len);
    read(*it, "sampler", "entropy_floor", c.sampler.entropy_floor);
  }
  if (const auto it = j.find("redistribution"); it != j.end()) {
    reject_unknown(*it, "redistribution", {"mode", "order", "alpha_high", "alpha_low"});
    read_enum(*it, "redistribution", "mode", c.redistribution.mode,
              redistribution_mode_from_string);
    read_enum(*it, "redistribution", "order", c.redistribution.order,
              redistribution_order_from_string);
    read(*it, "redistribution", "alpha_high", c.redistribution.alpha_high);
    read(*it, "redistribution", "alpha_low", c.redistribution.alpha_low);
  }
  if (const auto it = j.find("clip"); it != j.end()) {
    reject_unknown(*it, "clip",
                   {"mode", "eps_left_base", "eps_right_base", "eps_left_high", "eps_right_high",
                    "eps_left_low", "eps_right_low", "eps_left_cap"});
    read_enum(*it, "clip", "mode", c.clip.mode, clip_mode_from_string);
    read(*it, "clip", "eps_left_base", c.clip.eps_left_base);
    read(*it, "clip", "eps_right_base", c.clip.eps_right_base);
    read(*it, "clip", "eps_left_high", c.clip.eps_left_high);
    read(*it, "clip", "eps_right_high", c.clip.eps_right_high);
    read(*it, "clip", "eps_left_low", c.clip.eps_left_low);
    read(*it, "clip", "eps_right_low", c.clip.eps_right_low);
    read(*it, "clip", "eps_left_cap", c.clip.eps_left_cap);
  }
  if (const auto it = j.find("fork"); it != j.end()) {
    reject_unknown(*it, "fork", {"rho", "exclude_masked_from_denominator"});
    read(*it, "fork", "rho", c.fork.rho);
    read(*it, "fork", "exclude_masked_from_denominator", c.fork.exclude_masked_from_denominator);
  }
  if (const auto it = j.find("eval"); it != j.end()) {
    reject_unknown(*it, "eval", {"interval", "prompts", "samples", "temperature"});
    read(*it, "eval", "interval", c.eval.interval);
    read(*it, "eval", "prompts", c.eval.prompts);
    read(*it, "eval", "samples", c.eval.samples);
    read(*it, "eval", "temperature", c.eval.temperature);
  }
  if (const auto it = j.find("tasks"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("'tasks' must be an array");
    c.tasks.clear();
    for (std::size_t i = 0; i < it->size(); ++i) {
      c.tasks.push_back(task_from_json((*it)[i], "tasks." + std::to_string(i)));
    }
  }
  validate(c);
  return c;
}

// Applies "dotted.path=value" to a config tree. The value is parsed as JSON
// when possible (numbers, booleans, null, quoted strings) and taken as a bare
// string otherwise. Array elements are addressed by index: tasks.0.choices=4.
inline void apply_override(Json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  Json* node = &tree;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string& key = parts[i];
    if (key.empty()) throw ConfigError("override path '" + path + "' has an empty segment");
    const bool last = i + 1 == parts.size();
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(key);
      } catch (...) {
        throw ConfigError("override path '" + path + "': '" + key + "' is not an array index");
      }
      if (idx >= node->size()) throw ConfigError("override path '" + path + "': index out of range");
      node = &(*node)[idx];
    } else {
      if (node->is_null()) *node = Json::object();
      if (!node->is_object()) throw ConfigError("override path '" + path + "' crosses a scalar");
      node = &(*node)[key];
    }
    if (last) *node = value;
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

// Defaults, patched by the file contents, then by the overrides; fully
// parsed and validated. Starting from the defaults lets overrides address
// keys the file leaves out, including default array elements (tasks.0.*).
inline TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Json tree = to_json(TrainConfig{});
  if (!path.empty()) tree.merge_patch(read_json_file(path));
  for (const auto& o : overrides) apply_override(tree, o);
  return config_from_json(tree);
}

}  // namespace hapo

#endif  // HAPO_CONFIG_HPP_
