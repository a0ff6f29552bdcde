#pragma once

#include <Eigen/Core>

namespace laplace_rl {

/// Configuration of the Laplace-domain memory. All quantities are expressed
/// in environment steps (dt = 1 step by default).
struct MemoryConfig {
  double taustar_min = 1.0;  ///< smallest preferred time, > 0
  double taustar_max = 1000.0;
  int n_taus = 8;            ///< number of readout units, >= 2
  int k = 8;                 ///< inversion derivative order, positive even
  double dt = 1.0;
  int input_dim = 1;
};

/// Frozen two-layer memory: a diagonal decay recurrence holding a real-domain
/// Laplace transform of the input history, plus a fixed linear inversion that
/// recovers a log-compressed timeline. Immutable after construction and safe
/// to share between runs.
class MemoryEngine {
 public:
  explicit MemoryEngine(const MemoryConfig& cfg);

  const MemoryConfig& config() const { return cfg_; }
  int n_s() const { return static_cast<int>(s_grid_.size()); }
  int n_taus() const { return cfg_.n_taus; }

  /// Readout times tau*_i, log spaced from taustar_min to taustar_max.
  const Eigen::VectorXd& taustars() const { return taustars_; }
  /// Full decay-rate grid (n_taus + 2k nodes), ordered by increasing tau*,
  /// hence strictly decreasing in s.
  const Eigen::VectorXd& s_grid() const { return s_grid_; }
  /// Per-node one-step decay factors exp(-s_j dt), each in (0, 1).
  const Eigen::VectorXd& decay_diag() const { return decay_diag_; }
  /// Inversion matrix (n_taus x n_s).
  const Eigen::MatrixXd& inverse_op() const { return inverse_op_; }

 private:
  MemoryConfig cfg_;
  Eigen::VectorXd taustars_;
  Eigen::VectorXd s_grid_;
  Eigen::VectorXd decay_diag_;
  Eigen::MatrixXd inverse_op_;
};

/// Builds the matrix realizing ((-1)^k / k!) s^(k+1) d^k/ds^k on a strictly
/// monotone grid of n + 2k nodes; rows correspond to the n interior nodes.
/// The k-th derivative stencil is exact on polynomials up to degree k and its
/// remaining freedom is tuned against the exponential family the operator
/// acts on. `dt` bounds the smallest s*t product any row is evaluated at.
Eigen::MatrixXd build_inverse_operator(const Eigen::VectorXd& s_grid, int k,
                                       double dt = 1.0);

/// Activation of the Laplace layer; one row per input dimension.
struct LaplaceState {
  Eigen::MatrixXd F;  ///< input_dim x n_s

  static LaplaceState zero(const MemoryEngine& engine);
};

/// One recurrence step: F' = F .* decay + input (broadcast over s nodes).
/// Rejects non-finite input.
LaplaceState step(const LaplaceState& state, const MemoryEngine& engine,
                  const Eigen::VectorXd& input);

/// In-place variant of step() for rollout loops.
void step_inplace(LaplaceState& state, const MemoryEngine& engine,
                  const Eigen::VectorXd& input);

/// Applies the inversion: f~ = F * inverse_op^T  (input_dim x n_taus).
Eigen::MatrixXd read_tilde(const LaplaceState& state,
                           const MemoryEngine& engine);

/// Closed-form delta-pulse response of a readout unit:
///   (1/t) (k^(k+1)/k!) (t/tau*)^(k+1) exp(-k t/tau*),  t > 0.
/// Serves as the oracle for the discrete pipeline.
double impulse_response_analytic(double taustar, int k, double t);

/// Valid 1D convolution of each input row of f~ along the tau* axis followed
/// by a global max pool. Returns one value per input dimension.
Eigen::VectorXd conv_pool_readout(const Eigen::MatrixXd& f_tilde,
                                  const Eigen::VectorXd& kernel);

}  // namespace laplace_rl
