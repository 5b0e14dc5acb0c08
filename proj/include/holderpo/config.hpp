#pragma once

// JSON run configuration. Layout:
//
//   {
//     "schema_version": 1,
//     "task":     { "kind": "sparse" | "dense", "length", "vocab", "key_position",
//                   "key_token", "target_sequence", "dense_threshold", "prior_bias" },
//     "train":    { "group_size", "rollouts_per_round", "minibatch_groups",
//                   "updates_per_round", "learning_rate", "clip_epsilon",
//                   "clipping_regime", "std_mode", "seed", "total_rounds" },
//     "schedule": { "shape", "p_high", "p_low", "direction" }
//   }
//
// Every key is optional and defaults to the built-in task of the given kind.
// Unknown keys and wrongly typed values raise ConfigError naming the field.

#include <string>
#include <string_view>

#include <json.hpp>

#include "holderpo/sim.hpp"

namespace holderpo {

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
  TaskSpec task;
  TrainConfig train;
};

RunConfig default_run_config(TaskKind kind);

RunConfig parse_config(const nlohmann::json& doc);
RunConfig parse_config_text(std::string_view text);
RunConfig load_config(const std::string& path);

// Fully populated document that parse_config maps back to the same RunConfig.
nlohmann::ordered_json config_to_json(const RunConfig& config);

}  // namespace holderpo
