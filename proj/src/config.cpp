#include "holderpo/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "holderpo/errors.hpp"

namespace holderpo {

namespace {

using nlohmann::json;

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

void reject_unknown(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError(join(path, key), "unknown key");
  }
}

// Reads obj[key] into out when present, with a type check naming the field.
template <typename T>
void read(const json& obj, const std::string& path, const char* key, T& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string field = join(path, key);
  if constexpr (std::is_same_v<T, double>) {
    if (!it->is_number()) throw ConfigError(field, "expected a number");
    out = it->template get<double>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw ConfigError(field, "expected a string");
    out = it->template get<std::string>();
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!it->is_number_unsigned()) throw ConfigError(field, "expected a non-negative integer");
    out = it->template get<T>();
  } else {
    static_assert(std::is_same_v<T, void>, "unsupported config field type");
  }
}

// Runs fn, re-raising DomainError as a ConfigError on `field`.
template <typename Fn>
auto as_field(const std::string& field, Fn&& fn) {
  try {
    return fn();
  } catch (const DomainError& e) {
    throw ConfigError(field, e.what());
  }
}

void parse_task(const json& obj, TaskSpec& task) {
  reject_unknown(obj, "task", {"kind", "length", "vocab", "key_position", "key_token",
                               "target_sequence", "dense_threshold", "prior_bias"});
  read(obj, "task", "length", task.length);
  read(obj, "task", "vocab", task.vocab);
  read(obj, "task", "key_position", task.key_position);
  read(obj, "task", "key_token", task.key_token);
  read(obj, "task", "dense_threshold", task.dense_threshold);
  read(obj, "task", "prior_bias", task.prior_bias);
  if (const auto it = obj.find("target_sequence"); it != obj.end()) {
    if (!it->is_array()) throw ConfigError("task.target_sequence", "expected an array");
    task.target_sequence.clear();
    for (const auto& v : *it) {
      if (!v.is_number_unsigned()) {
        throw ConfigError("task.target_sequence", "expected non-negative integers");
      }
      task.target_sequence.push_back(v.get<std::size_t>());
    }
  }
}

void parse_train(const json& obj, TrainConfig& train) {
  reject_unknown(obj, "train", {"group_size", "rollouts_per_round", "minibatch_groups",
                                "updates_per_round", "learning_rate", "clip_epsilon",
                                "clipping_regime", "std_mode", "seed", "total_rounds"});
  read(obj, "train", "group_size", train.group_size);
  read(obj, "train", "rollouts_per_round", train.rollouts_per_round);
  read(obj, "train", "minibatch_groups", train.minibatch_groups);
  read(obj, "train", "updates_per_round", train.updates_per_round);
  read(obj, "train", "learning_rate", train.learning_rate);
  read(obj, "train", "clip_epsilon", train.clip_epsilon);
  read(obj, "train", "seed", train.seed);
  read(obj, "train", "total_rounds", train.total_rounds);
  std::string name;
  if (obj.contains("clipping_regime")) {
    read(obj, "train", "clipping_regime", name);
    train.clipping_regime =
        as_field("train.clipping_regime", [&] { return parse_clip_regime(name); });
  }
  if (obj.contains("std_mode")) {
    read(obj, "train", "std_mode", name);
    train.std_mode = as_field("train.std_mode", [&] { return parse_std_mode(name); });
  }
}

void parse_schedule(const json& obj, ScheduleSpec& schedule) {
  reject_unknown(obj, "schedule", {"shape", "p_high", "p_low", "direction"});
  std::string name;
  if (obj.contains("shape")) {
    read(obj, "schedule", "shape", name);
    schedule.shape = as_field("schedule.shape", [&] { return parse_schedule_shape(name); });
  }
  if (obj.contains("direction")) {
    read(obj, "schedule", "direction", name);
    schedule.direction =
        as_field("schedule.direction", [&] { return parse_schedule_direction(name); });
  }
  read(obj, "schedule", "p_high", schedule.p_high);
  schedule.p_low = schedule.p_high;
  read(obj, "schedule", "p_low", schedule.p_low);
  if (schedule.shape == ScheduleShape::kConstant && schedule.p_low != schedule.p_high) {
    throw ConfigError("schedule.p_low", "a constant schedule uses p_high only");
  }
}

// Maps a validation failure to the config field it concerns, by message prefix.
std::string field_for(const std::string& message, const char* section) {
  static const char* const keys[] = {
      "rollouts_per_round", "minibatch_groups", "group_size", "updates_per_round",
      "total_rounds", "learning_rate", "prior_bias", "key_position", "key_token",
      "target_sequence", "dense_threshold", "clip epsilon", "p_high", "schedule"};
  for (const char* k : keys) {
    if (message.find(k) != std::string::npos) {
      std::string key = k;
      if (key == "clip epsilon") return "train.clip_epsilon";
      if (key == "p_high") return "schedule.p_high";
      if (key == "schedule") return "schedule";
      return std::string(section) + "." + key;
    }
  }
  return section;
}

}  // namespace

RunConfig default_run_config(TaskKind kind) {
  RunConfig c;
  c.task = kind == TaskKind::kSparse ? default_sparse_task() : default_dense_task();
  return c;
}

RunConfig parse_config(const json& doc) {
  reject_unknown(doc, "", {"schema_version", "task", "train", "schedule"});
  const auto version = doc.find("schema_version");
  if (version == doc.end()) throw ConfigError("schema_version", "missing");
  if (!version->is_number_integer() || version->get<long>() != kConfigSchemaVersion) {
    throw ConfigError("schema_version",
                      "unsupported version (expected " + std::to_string(kConfigSchemaVersion) + ")");
  }

  TaskKind kind = TaskKind::kSparse;
  if (doc.contains("task")) {
    const auto& task = doc["task"];
    if (!task.is_object()) throw ConfigError("task", "expected an object");
    if (task.contains("kind")) {
      std::string name;
      read(task, "task", "kind", name);
      kind = as_field("task.kind", [&] { return parse_task_kind(name); });
    }
  }
  RunConfig c = default_run_config(kind);
  if (doc.contains("task")) parse_task(doc["task"], c.task);
  if (doc.contains("train")) parse_train(doc["train"], c.train);
  if (doc.contains("schedule")) parse_schedule(doc["schedule"], c.train.schedule);

  try {
    c.task.validate();
  } catch (const DomainError& e) {
    throw ConfigError(field_for(e.what(), "task"), e.what());
  }
  try {
    c.train.validate();
  } catch (const DomainError& e) {
    throw ConfigError(field_for(e.what(), "train"), e.what());
  }
  return c;
}

RunConfig parse_config_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("malformed JSON: ") + e.what());
  }
  return parse_config(doc);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

nlohmann::ordered_json config_to_json(const RunConfig& config) {
  nlohmann::ordered_json j;
  j["schema_version"] = kConfigSchemaVersion;
  const auto& t = config.task;
  auto& task = j["task"];
  task["kind"] = to_string(t.kind);
  task["length"] = t.length;
  task["vocab"] = t.vocab;
  if (t.kind == TaskKind::kSparse) {
    task["key_position"] = t.key_position;
    task["key_token"] = t.key_token;
  } else {
    task["target_sequence"] = t.target_sequence;
    task["dense_threshold"] = t.dense_threshold;
  }
  task["prior_bias"] = t.prior_bias;

  const auto& tr = config.train;
  auto& train = j["train"];
  train["group_size"] = tr.group_size;
  train["rollouts_per_round"] = tr.rollouts_per_round;
  train["minibatch_groups"] = tr.minibatch_groups;
  train["updates_per_round"] = tr.updates_per_round;
  train["learning_rate"] = tr.learning_rate;
  train["clip_epsilon"] = tr.clip_epsilon;
  train["clipping_regime"] = to_string(tr.clipping_regime);
  train["std_mode"] = to_string(tr.std_mode);
  train["seed"] = tr.seed;
  train["total_rounds"] = tr.total_rounds;

  const auto& s = tr.schedule;
  auto& schedule = j["schedule"];
  schedule["shape"] = to_string(s.shape);
  schedule["p_high"] = s.p_high;
  if (s.shape != ScheduleShape::kConstant) {
    schedule["p_low"] = s.p_low;
    schedule["direction"] = to_string(s.direction);
  }
  return j;
}

}  // namespace holderpo
