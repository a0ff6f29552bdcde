#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "laplace_rl/config.hpp"

namespace laplace_rl {

// Exit codes shared by all commands: 0 ok, 2 usage/config, 3 runtime failure.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct TrainArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;  ///< restricts to one seed
  bool quiet = false;
};
int cmd_train(const TrainArgs& args);

struct EvalArgs {
  std::string checkpoint_path;
  std::vector<double> scales = {1.0};
  int n_trials = 500;
  std::uint64_t seed = 0;
  std::string out_dir;  ///< defaults next to the checkpoint
  bool record_activity = false;
  bool trial_log = true;
};
int cmd_eval(const EvalArgs& args);

struct AnalyzeArgs {
  std::string kind;  ///< time-cells | psychometric | curves
  std::string run_dir;
  std::string activity_path;  ///< time-cells input
  std::string trials_path;    ///< psychometric input (trials.csv from eval)
  std::string glob = "seed*";
  std::string out_dir;
  int window = 500;
  bool heatmap = true;
};
int cmd_analyze(const AnalyzeArgs& args);

struct SweepArgs {
  std::string manifest_path;
  int jobs = 1;
  bool quiet = false;
};
int cmd_sweep(const SweepArgs& args);

/// Runs training for one seed of a loaded config; returns the run directory.
/// Exposed for tests and the acceptance suite.
struct RunOutput {
  std::filesystem::path dir;
  long trials_to_criterion = -1;
  long trials_run = 0;
};
RunOutput run_one_seed(const ExperimentConfig& config, std::uint64_t seed,
                       bool quiet = true);

}  // namespace laplace_rl
