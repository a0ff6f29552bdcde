#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "laplace_rl/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Scale-invariant Laplace-memory RL workbench"};
  app.require_subcommand(1);

  laplace_rl::TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train agents from a config file");
  train->add_option("--config", train_args.config_path, "Experiment config JSON")
      ->required();
  train->add_option("--override", train_args.overrides,
                    "Config override path.to.key=value (repeatable)");
  std::int64_t seed_flag = -1;
  train->add_option("--seed", seed_flag, "Run only this seed");
  train->add_flag("--quiet", train_args.quiet, "Suppress progress lines");

  laplace_rl::EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint greedily");
  eval->add_option("--checkpoint", eval_args.checkpoint_path, "Checkpoint JSON")
      ->required();
  eval->add_option("--scales", eval_args.scales, "Temporal scales to evaluate at")
      ->delimiter(',');
  eval->add_option("--trials", eval_args.n_trials, "Trials per scale");
  eval->add_option("--seed", eval_args.seed, "Evaluation seed");
  eval->add_option("--out", eval_args.out_dir, "Output directory");
  eval->add_flag("--record-activity", eval_args.record_activity,
                 "Dump core-layer activity per scale");

  laplace_rl::AnalyzeArgs analyze_args;
  auto* analyze =
      app.add_subcommand("analyze", "Post-hoc analyses over run artifacts");
  analyze->add_option("kind", analyze_args.kind, "time-cells | psychometric | curves")
      ->required();
  analyze->add_option("--run-dir", analyze_args.run_dir, "Run directory (curves)");
  analyze->add_option("--activity", analyze_args.activity_path,
                      "Activity dump (time-cells)");
  analyze->add_option("--trials", analyze_args.trials_path,
                      "trials.csv from eval (psychometric)");
  analyze->add_option("--glob", analyze_args.glob, "Seed directory glob (curves)");
  analyze->add_option("--out", analyze_args.out_dir, "Output directory");
  analyze->add_option("--window", analyze_args.window, "Rolling window (curves)");

  laplace_rl::SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "Run a manifest of configurations");
  sweep->add_option("--manifest", sweep_args.manifest_path, "Sweep manifest JSON")
      ->required();
  sweep->add_option("--jobs", sweep_args.jobs, "Parallel runs");
  sweep->add_flag("--quiet", sweep_args.quiet, "Suppress per-run lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : laplace_rl::kExitConfig;
  }

  if (train->parsed()) {
    if (seed_flag >= 0) train_args.seed = static_cast<std::uint64_t>(seed_flag);
    return laplace_rl::cmd_train(train_args);
  }
  if (eval->parsed()) return laplace_rl::cmd_eval(eval_args);
  if (analyze->parsed()) return laplace_rl::cmd_analyze(analyze_args);
  if (sweep->parsed()) return laplace_rl::cmd_sweep(sweep_args);
  return laplace_rl::kExitConfig;
}
