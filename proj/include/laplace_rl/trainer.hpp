#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>

#include "laplace_rl/envs.hpp"
#include "laplace_rl/nets.hpp"

namespace laplace_rl {

enum class Algo { a2c, reinforce };
enum class UpdateMode { per_trial, horizon };

std::string algo_name(Algo a);
Algo algo_from_name(const std::string& name);

struct TrainConfig {
  double gamma = 0.98;
  double gae_lambda = 0.95;
  double lr = 1e-3;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;  ///< global gradient norm; <= 0 disables
  Algo algo = Algo::a2c;
  UpdateMode update_mode = UpdateMode::per_trial;
  int horizon = 128;
  long n_trials = 0;
  int n_seeds = 5;
  long checkpoint_every = 0;  ///< 0 = final checkpoint only
  int criterion_window = 500;
  double criterion_reward = 0.8;
  bool stop_on_criterion = false;
};

/// GAE over one episode: values carries a terminal bootstrap (len+1 entries).
Eigen::VectorXd compute_gae(const Eigen::VectorXd& rewards,
                            const Eigen::VectorXd& values, double gamma,
                            double lambda);

/// GAE over a segment that may span episode boundaries.
Eigen::VectorXd compute_gae_masked(const Eigen::VectorXd& rewards,
                                   const Eigen::VectorXd& values,
                                   const std::vector<bool>& dones, double gamma,
                                   double lambda);

/// Discounted return-to-go within one episode.
Eigen::VectorXd returns_to_go(const Eigen::VectorXd& rewards, double gamma);

struct AdamState {
  AgentParams m, v;
  long t = 0;

  static AdamState zero(const AgentParams& params);
};

/// Bias-corrected Adam update over all trainable tensors.
void adam_step(AdamState& state, AgentParams& params, const AgentParams& grads,
               const TrainConfig& cfg);

/// Scales gradients to the given global norm when exceeded; returns the
/// pre-clip norm.
double clip_gradients(AgentParams& grads, double max_norm);

struct UpdateMetrics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;
};

UpdateMetrics a2c_update(AgentParams& params, AdamState& opt, const Trajectory& traj,
                         const TrainConfig& cfg, double bootstrap_value = 0.0);
UpdateMetrics reinforce_update(AgentParams& params, AdamState& opt,
                               const Trajectory& traj, const TrainConfig& cfg);

/// Derivative of the loss
///   L = -sum_t w_t log pi(a_t) + value_coef sum_t (V_t - ret_t)^2
///       - entropy_coef sum_t H_t
/// with respect to per-step logits and values (weights treated as constants).
void policy_loss_grads(const Trajectory& traj, const Eigen::VectorXd& weights,
                       const Eigen::VectorXd& returns, bool with_value,
                       const TrainConfig& cfg, Eigen::MatrixXd& dlogits,
                       Eigen::VectorXd& dvalues, UpdateMetrics& metrics);

/// Teacher-forced scalar losses on fixed (obs, actions, weights); the
/// independent target for finite-difference gradient checks.
double a2c_loss(const AgentParams& params, const MemoryEngine* engine,
                const Eigen::MatrixXd& obs, const std::vector<int>& actions,
                const Eigen::VectorXd& advantages, const Eigen::VectorXd& returns,
                const TrainConfig& cfg);
double reinforce_loss(const AgentParams& params, const MemoryEngine* engine,
                      const Eigen::MatrixXd& obs, const std::vector<int>& actions,
                      const Eigen::VectorXd& returns, const TrainConfig& cfg);

/// Runs one trial to completion. Sampled policy unless greedy.
Trajectory rollout_trial(Env& env, const AgentParams& params,
                         const MemoryEngine* engine, std::mt19937_64& rng,
                         bool greedy = false);

struct RunRecordRow {
  long trial = 0;
  double reward = 0.0;
  int length = 0;
  double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0;
};

struct TrainResult {
  AgentParams params;
  long trials_run = 0;
  long trials_to_criterion = -1;  ///< first trial index meeting the windowed
                                  ///< mean-reward criterion; -1 if never
};

struct CheckpointSink {
  /// Called with (trial index, params, action-rng state string).
  std::function<void(long, const AgentParams&, const std::string&)> save;
};

TrainResult run_training(
    const EnvSpec& env_spec, const NetConfig& net_cfg, const TrainConfig& cfg,
    std::uint64_t seed,
    const std::function<void(const RunRecordRow&)>& on_trial = nullptr,
    const CheckpointSink& checkpoints = {});

/// splitmix64, used to derive independent seed streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace laplace_rl
