#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "popusense/synthdata.hpp"
#include "popusense/train.hpp"

namespace popusense {

/// Everything one experiment needs, read from a single JSON file with the
/// sections "dataset", "model", "train", "popusense" and "eval". Every key is
/// optional; unknown keys are rejected.
struct RunConfig {
  synth::DatasetSpec dataset;
  train::TrainConfig train;
  train::EvalOptions eval;
};

/// Throws Error(ConfigError) naming the offending key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully resolved config as compact JSON with sorted keys.
std::string canonical_json(const RunConfig& cfg);

/// 16 hex digits of FNV-1a over canonical_json().
std::string config_hash(const RunConfig& cfg);

std::string fnv1a_hex(const std::string& bytes);

/// Applies POPUSENSE_SEED_OVERRIDE (an unsigned integer) to train.seed.
/// Returns the override if one was applied.
std::optional<std::uint64_t> apply_seed_override(RunConfig& cfg);

/// Documented defaults, formatted as a config file.
std::string default_config_json();

}  // namespace popusense
