#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "laplace_rl/checkpoint.hpp"
#include "laplace_rl/config.hpp"

namespace laplace_rl {

/// Activity of one recorded trial: rows are steps, columns units.
struct ActivityTrial {
  Eigen::MatrixXd activity;
  int onset = 0;   ///< interval-onset step (time axis is aligned here)
  int offset = 0;  ///< interval-end step
  int interval = 0;
  int action = -1;
  double reward = 0.0;
};

struct ActivityRecord {
  std::string layer;  ///< "tilde", "F" or "hidden"
  std::vector<ActivityTrial> trials;

  int units() const {
    return trials.empty() ? 0 : static_cast<int>(trials.front().activity.cols());
  }

  /// Binary matrix file plus a JSON sidecar (<path>.meta.json).
  void save(const std::filesystem::path& path) const;
  static ActivityRecord load(const std::filesystem::path& path);
};

enum class UnitClass { silent, persistent, monotonic, transient };
std::string unit_class_name(UnitClass c);

struct ClassifyThresholds {
  double silent_eps = 1e-6;    ///< of the loudest unit's peak magnitude
  double persistent_cv = 0.05;
  double monotonic_rho = 0.95;
  double fit_r2 = 0.8;
  int min_trials_per_condition = 50;
};

struct CellStats {
  int unit = 0;
  UnitClass klass = UnitClass::silent;
  double peak = 0.0;     ///< fitted peak time (steps after onset)
  double std_dev = 0.0;  ///< fitted Gaussian std
  double r2 = 0.0;
  bool fit_ok = false;   ///< transient with an accepted fit
};

/// Trial-averaged activity aligned at interval onset (units x L).
Eigen::MatrixXd mean_traces(const ActivityRecord& record);

std::vector<CellStats> classify_units(const ActivityRecord& record,
                                      const ClassifyThresholds& thresholds = {});

struct GaussFit {
  double amp = 0.0, mu = 0.0, sigma = 0.0, base = 0.0, r2 = 0.0;
  bool converged = false;
};

/// Least-squares fit of a*exp(-(t-mu)^2/(2 sigma^2))+b over t = 0..len-1,
/// Levenberg-Marquardt from an argmax/second-moment start.
GaussFit fit_gaussian(const Eigen::VectorXd& y);

struct Regression {
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
  int n = 0;
};

/// OLS of fitted std on fitted peak over accepted transient cells.
Regression peak_width_regression(const std::vector<CellStats>& cells);

double spearman_rho(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// One evaluated trial of a choice task.
struct EvalTrial {
  int interval1 = -1, interval2 = -1;
  int action = -1;
  int correct_action = -1;
  double reward = 0.0;
  int length = 0;
  int response_elapsed = -1;
};

struct PsychometricPoint {
  int interval = 0;
  int n = 0;
  double p_long = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
};

/// P(choose long) per interval with binomial 95% intervals. Requires
/// min_trials per interval.
std::vector<PsychometricPoint> psychometric_curve(
    const std::vector<EvalTrial>& trials, int min_trials = 100);

struct EvalSummary {
  double accuracy = 0.0;     ///< fraction of trials rewarded +1
  double mean_reward = 0.0;
  int n_trials = 0;
  std::vector<EvalTrial> trials;
};

/// Greedy evaluation of fixed parameters at the given scale; optionally
/// records core-layer activity.
EvalSummary evaluate_policy(const ExperimentConfig& config,
                            const AgentParams& params, double scale,
                            int n_trials, std::uint64_t seed,
                            ActivityRecord* activity = nullptr);

struct ScaleAccuracy {
  double scale = 0.0;
  double accuracy = 0.0;
  double mean_reward = 0.0;
  int n_trials = 0;
  bool out_of_range = false;  ///< scheduled times exceed the tau* range
};

/// Zero-shot evaluation of a checkpoint across temporal scales.
std::vector<ScaleAccuracy> cross_scale_eval(const Checkpoint& ck,
                                            const std::vector<double>& scales,
                                            int n_trials, std::uint64_t seed);

/// Aggregated learning curves: per-trial mean and standard error across runs
/// of the rolling-window mean reward.
struct CurveAggregate {
  std::vector<long> trial;
  std::vector<double> mean, stderr_;
  int n_runs = 0;
};
CurveAggregate aggregate_curves(const std::vector<std::vector<double>>& rewards,
                                int window);

/// First trial index whose trailing window mean reaches the threshold, or -1.
long trials_to_criterion(const std::vector<double>& rewards, int window,
                         double threshold);

}  // namespace laplace_rl
