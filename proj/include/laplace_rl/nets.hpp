#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "laplace_rl/envs.hpp"
#include "laplace_rl/memory.hpp"

namespace laplace_rl {

enum class CoreKind { cogrnn_tilde, cogrnn_F, rnn, lstm };

std::string core_name(CoreKind kind);
CoreKind core_from_name(const std::string& name);

struct NetConfig {
  CoreKind core = CoreKind::cogrnn_tilde;
  bool frozen_core = false;  ///< freezes rnn/lstm weights (ablation)
  bool use_conv = false;     ///< conv+pool readout over the tau* axis
  int obs_dim = 1;
  int n_actions = 3;
  int hidden_size = 64;  ///< dense layer between core and heads
  int rnn_hidden = 128;
  int conv_channels = 8;
  int conv_len = 3;
  MemoryConfig memory;  ///< cogrnn cores only

  int feature_dim() const;
  /// True when the core itself carries trainable parameters.
  bool core_trainable() const {
    return (core == CoreKind::rnn || core == CoreKind::lstm) && !frozen_core;
  }
};

/// All weights of an agent. Every tensor is a matrix; vectors are single
/// columns. LSTM gate rows are stacked [input; forget; cell; output].
struct AgentParams {
  NetConfig cfg;

  Eigen::MatrixXd rnn_wx, rnn_wh, rnn_b;
  Eigen::MatrixXd lstm_wx, lstm_wh, lstm_b;
  Eigen::MatrixXd conv_w;  ///< conv_channels x conv_len
  Eigen::MatrixXd w_hidden, b_hidden;
  Eigen::MatrixXd w_policy, b_policy;
  Eigen::MatrixXd w_value, b_value;

  /// Visits (name, tensor) pairs. With trainable_only, frozen core weights
  /// are skipped; cogrnn cores never expose core tensors.
  template <class F>
  void for_each(F&& f, bool trainable_only = true) {
    const bool core_vis = cfg.core_trainable() || !trainable_only;
    if (cfg.core == CoreKind::rnn && core_vis) {
      f("rnn_wx", rnn_wx);
      f("rnn_wh", rnn_wh);
      f("rnn_b", rnn_b);
    }
    if (cfg.core == CoreKind::lstm && core_vis) {
      f("lstm_wx", lstm_wx);
      f("lstm_wh", lstm_wh);
      f("lstm_b", lstm_b);
    }
    if (cfg.use_conv) f("conv_w", conv_w);
    f("w_hidden", w_hidden);
    f("b_hidden", b_hidden);
    f("w_policy", w_policy);
    f("b_policy", b_policy);
    f("w_value", w_value);
    f("b_value", b_value);
  }
  template <class F>
  void for_each(F&& f, bool trainable_only = true) const {
    const_cast<AgentParams*>(this)->for_each(
        [&](const char* name, Eigen::MatrixXd& m) {
          f(name, static_cast<const Eigen::MatrixXd&>(m));
        },
        trainable_only);
  }

  AgentParams zeros_like() const;
  bool all_finite() const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, LSTM
/// forget-gate bias +1.
AgentParams init_agent_params(const NetConfig& cfg, std::mt19937_64& rng);

/// Snapshot of a core's recurrent state (not its cache).
struct CoreState {
  LaplaceState laplace;
  Eigen::VectorXd h, c;
};

/// Stateful forward pass of a recurrent core over one trial/segment, caching
/// whatever the matching backward needs. The cogrnn cores are input-driven
/// and frozen; rnn/lstm run their trainable recurrences.
class CoreRuntime {
 public:
  CoreRuntime(const AgentParams& params, const MemoryEngine* engine);

  /// Clears recurrent state and cache.
  void reset();
  /// Clears the cache but keeps recurrent state (truncated BPTT boundary).
  void start_segment();

  CoreState state() const { return {laplace_, h_, c_}; }
  void set_state(const CoreState& s) {
    laplace_ = s.laplace;
    h_ = s.h;
    c_ = s.c;
  }

  Eigen::VectorXd step(const Eigen::VectorXd& obs);

  /// Reverse-mode pass over the cached segment; accumulates into grads.
  void backward(const Eigen::MatrixXd& dfeatures, AgentParams& grads) const;

  int steps() const { return steps_; }
  int feature_dim() const { return params_->cfg.feature_dim(); }

  /// Core-layer activity at a cached step: f~ for cogrnn_tilde (pre conv),
  /// F for cogrnn_F, hidden state for rnn/lstm.
  Eigen::VectorXd core_activity(int t) const;

 private:
  const AgentParams* params_;
  const MemoryEngine* engine_;

  LaplaceState laplace_;
  Eigen::VectorXd h_, c_;

  // caches, one row per step
  Eigen::MatrixXd obs_, tilde_, h_hist_, c_hist_, tanh_c_hist_, gates_;
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> pool_arg_;
  int steps_ = 0;
  int cap_ = 0;
  void ensure_capacity(int rows);
};

/// Sequence-level convenience wrapper: features row per step.
Eigen::MatrixXd core_forward(const AgentParams& params,
                             const MemoryEngine* engine,
                             const Eigen::MatrixXd& obs_sequence);

struct HeadsOut {
  Eigen::VectorXd hidden;  ///< post-relu dense activation
  Eigen::VectorXd logits;
  double value = 0.0;
};

HeadsOut heads_forward(const AgentParams& params, const Eigen::VectorXd& feature);

struct ActionSample {
  int action = 0;
  double log_prob = 0.0;
  double entropy = 0.0;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
ActionSample sample_action(const Eigen::VectorXd& logits, std::mt19937_64& rng);
int greedy_action(const Eigen::VectorXd& logits);

/// Everything recorded while rolling out one trial/segment, sufficient for
/// exact reverse-mode gradients.
struct Trajectory {
  std::unique_ptr<CoreRuntime> core;
  Eigen::MatrixXd features;  ///< T x feat
  Eigen::MatrixXd hidden;    ///< T x hidden_size
  Eigen::MatrixXd probs;     ///< T x n_actions
  Eigen::VectorXd values;    ///< T
  std::vector<int> actions;
  Eigen::VectorXd log_probs, entropies, rewards;
  std::vector<bool> dones;  ///< horizon segments may span trial ends
  int length = 0;
  double total_reward = 0.0;
  TrialInfo info;  ///< metadata of the (last) trial in the segment
};

/// Exact gradients of a loss whose derivative w.r.t. per-step logits and
/// values is given. BPTT over the cached segment for trainable cores.
AgentParams backward(const AgentParams& params, const Trajectory& traj,
                     const Eigen::MatrixXd& dlogits,
                     const Eigen::VectorXd& dvalues);

}  // namespace laplace_rl
