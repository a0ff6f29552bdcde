#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace laplace_rl {

enum class Task {
  interval_timing,
  interval_discrimination,
  delayed_match_to_sample,
  interval_reproduction,
};

std::string task_name(Task task);
Task task_from_name(const std::string& name);

/// Choice-task actions. Reproduction uses {hold, respond} with respond == 1.
enum Action : int { kHold = 0, kLeft = 1, kRight = 2, kRespond = 1 };

/// Trial schedule parameters, expressed in base steps at scale 1. Every
/// scheduled phase length is scale * base rounded half-up, minimum 1 step.
struct EnvSpec {
  Task task = Task::interval_timing;
  double scale = 1.0;
  std::uint64_t seed = 0;

  std::vector<int> timing_durations = {30, 33, 36, 40, 44, 48};
  std::vector<int> discrimination_durations = {10, 15, 22, 33};
  std::vector<int> reproduction_intervals = {10, 20, 30, 40, 50,
                                             60, 70, 80, 90, 100};
  int fixation = 5;
  int timing_delay = 5;
  int discrimination_delay = 20;
  int dms_sample = 5;
  int dms_delay = 20;
  int dms_test = 5;
  int response_window = 10;
  double reproduction_window_factor = 2.0;
};

/// Per-trial metadata carried alongside observations.
struct TrialInfo {
  int trial_id = -1;
  int interval1 = -1;       ///< scheduled steps (timing/reproduction: the interval)
  int interval2 = -1;       ///< discrimination second interval
  int sample_angle = -1;    ///< DMS sample angle in degrees
  int test_angle = -1;      ///< DMS test angle in degrees
  int correct_action = -1;  ///< expected choice (reproduction: kRespond)
  int chosen_action = -1;   ///< registered choice, -1 until made
  int response_elapsed = -1;  ///< reproduction: steps between offset pulse and respond
  std::string phase;          ///< phase at the current step
  int t = 0;                  ///< step index within the trial
};

struct StepResult {
  Eigen::VectorXd observation;
  double reward = 0.0;
  bool done = false;
  TrialInfo info;
};

/// Episodic 1D timing environment. Deterministic dynamics; the only
/// randomness is the per-trial sampling of latent quantities from the
/// environment's own seeded stream.
class Env {
 public:
  explicit Env(EnvSpec spec);

  StepResult reset();
  StepResult step(int action);

  int observation_dim() const;
  int action_count() const;
  const EnvSpec& spec() const { return spec_; }

  /// Rounded phase length at this environment's scale.
  int scaled(int base_steps) const;

 private:
  Eigen::VectorXd observation_at(int t) const;
  std::string phase_at(int t) const;
  void finish(StepResult& r, double reward);

  EnvSpec spec_;
  std::mt19937_64 rng_;
  int trial_counter_ = 0;

  // schedule of the current trial (step indices)
  int t_ = 0;
  bool in_trial_ = false;
  TrialInfo info_;
  int pulse_a_ = -1, pulse_b_ = -1, pulse_c_ = -1, pulse_d_ = -1;
  int window_begin_ = 0, window_end_ = 0;  // [begin, end)
  int sample_begin_ = 0, sample_end_ = 0;  // DMS stimulus windows
  int test_begin_ = 0, test_end_ = 0;
};

Env make_env(const EnvSpec& spec);

}  // namespace laplace_rl
