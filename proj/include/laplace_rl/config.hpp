#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "laplace_rl/envs.hpp"
#include "laplace_rl/nets.hpp"
#include "laplace_rl/trainer.hpp"

namespace laplace_rl {

/// Raised on malformed or invalid configuration; the message names the field.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything one experiment needs: environment, agent, training schedule,
/// seeds and output locations. Round-trips losslessly through JSON.
struct ExperimentConfig {
  std::string name = "experiment";
  EnvSpec env;
  NetConfig net;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  bool record_activity = false;
  int activity_trials = 100;  ///< greedy trials recorded after training
  std::string out_dir = "runs";

  /// Canonical JSON (sorted keys, exact doubles).
  std::string to_json() const;
  /// Hash of the canonical JSON; embedded in every artifact.
  std::string hash() const;

  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path,
                               const std::vector<std::string>& overrides = {});

  /// Output directory of one run: <root>/<name>-<hash8>/seed<k>.
  /// Root resolution: LAPLACE_RL_OUT env var wins over out_dir.
  std::filesystem::path run_dir(std::uint64_t seed) const;
};

/// Applies `path.to.key=value` to a JSON document (value parsed as JSON when
/// possible, else taken as a string).
void apply_override(std::string& json_text, const std::string& override_expr);

}  // namespace laplace_rl
