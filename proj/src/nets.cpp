#include "laplace_rl/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace laplace_rl {

std::string core_name(CoreKind kind) {
  switch (kind) {
    case CoreKind::cogrnn_tilde: return "cogrnn_tilde";
    case CoreKind::cogrnn_F: return "cogrnn_f";
    case CoreKind::rnn: return "rnn";
    case CoreKind::lstm: return "lstm";
  }
  return "?";
}

CoreKind core_from_name(const std::string& name) {
  if (name == "cogrnn_tilde") return CoreKind::cogrnn_tilde;
  if (name == "cogrnn_f" || name == "cogrnn_F") return CoreKind::cogrnn_F;
  if (name == "rnn") return CoreKind::rnn;
  if (name == "lstm") return CoreKind::lstm;
  throw std::invalid_argument("unknown core kind: " + name);
}

int NetConfig::feature_dim() const {
  switch (core) {
    case CoreKind::cogrnn_tilde:
      return use_conv ? obs_dim * conv_channels : obs_dim * memory.n_taus;
    case CoreKind::cogrnn_F:
      return obs_dim * (memory.n_taus + 2 * memory.k);
    case CoreKind::rnn:
    case CoreKind::lstm:
      return rnn_hidden;
  }
  return 0;
}

AgentParams AgentParams::zeros_like() const {
  AgentParams z;
  z.cfg = cfg;
  auto like = [](const Eigen::MatrixXd& m) {
    return Eigen::MatrixXd::Zero(m.rows(), m.cols());
  };
  z.rnn_wx = like(rnn_wx);
  z.rnn_wh = like(rnn_wh);
  z.rnn_b = like(rnn_b);
  z.lstm_wx = like(lstm_wx);
  z.lstm_wh = like(lstm_wh);
  z.lstm_b = like(lstm_b);
  z.conv_w = like(conv_w);
  z.w_hidden = like(w_hidden);
  z.b_hidden = like(b_hidden);
  z.w_policy = like(w_policy);
  z.b_policy = like(b_policy);
  z.w_value = like(w_value);
  z.b_value = like(b_value);
  return z;
}

bool AgentParams::all_finite() const {
  bool ok = true;
  for_each([&](const char*, const Eigen::MatrixXd& m) { ok = ok && m.allFinite(); },
           false);
  return ok;
}

namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Eigen::MatrixXd uniform_init(int rows, int cols, int fan_in,
                             std::mt19937_64& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = a * (2.0 * uniform01(rng) - 1.0);
  return m;
}

}  // namespace

AgentParams init_agent_params(const NetConfig& cfg, std::mt19937_64& rng) {
  AgentParams p;
  p.cfg = cfg;
  const int H = cfg.rnn_hidden;
  if (cfg.core == CoreKind::rnn) {
    p.rnn_wx = uniform_init(H, cfg.obs_dim, cfg.obs_dim, rng);
    p.rnn_wh = uniform_init(H, H, H, rng);
    p.rnn_b = Eigen::MatrixXd::Zero(H, 1);
  }
  if (cfg.core == CoreKind::lstm) {
    p.lstm_wx = uniform_init(4 * H, cfg.obs_dim, cfg.obs_dim, rng);
    p.lstm_wh = uniform_init(4 * H, H, H, rng);
    p.lstm_b = Eigen::MatrixXd::Zero(4 * H, 1);
    p.lstm_b.block(H, 0, H, 1).setConstant(1.0);  // forget gate bias
  }
  if (cfg.use_conv)
    p.conv_w = uniform_init(cfg.conv_channels, cfg.conv_len, cfg.conv_len, rng);
  const int feat = cfg.feature_dim();
  p.w_hidden = uniform_init(cfg.hidden_size, feat, feat, rng);
  p.b_hidden = Eigen::MatrixXd::Zero(cfg.hidden_size, 1);
  p.w_policy = uniform_init(cfg.n_actions, cfg.hidden_size, cfg.hidden_size, rng);
  p.b_policy = Eigen::MatrixXd::Zero(cfg.n_actions, 1);
  p.w_value = uniform_init(1, cfg.hidden_size, cfg.hidden_size, rng);
  p.b_value = Eigen::MatrixXd::Zero(1, 1);
  return p;
}

CoreRuntime::CoreRuntime(const AgentParams& params, const MemoryEngine* engine)
    : params_(&params), engine_(engine) {
  const NetConfig& cfg = params.cfg;
  if ((cfg.core == CoreKind::cogrnn_tilde || cfg.core == CoreKind::cogrnn_F) &&
      engine_ == nullptr)
    throw std::invalid_argument("core runtime: cogrnn cores need a memory engine");
  if (cfg.use_conv && cfg.core != CoreKind::cogrnn_tilde)
    throw std::invalid_argument("core runtime: conv readout requires cogrnn_tilde");
  if (engine_ && engine_->config().input_dim != cfg.obs_dim)
    throw std::invalid_argument("core runtime: engine input_dim != obs_dim");
  reset();
}

void CoreRuntime::reset() {
  const NetConfig& cfg = params_->cfg;
  if (engine_) laplace_ = LaplaceState::zero(*engine_);
  if (cfg.core == CoreKind::rnn || cfg.core == CoreKind::lstm) {
    h_ = Eigen::VectorXd::Zero(cfg.rnn_hidden);
    c_ = Eigen::VectorXd::Zero(cfg.rnn_hidden);
  }
  start_segment();
}

void CoreRuntime::start_segment() {
  steps_ = 0;
  cap_ = 0;
  obs_.resize(0, 0);
  tilde_.resize(0, 0);
  h_hist_.resize(0, 0);
  c_hist_.resize(0, 0);
  tanh_c_hist_.resize(0, 0);
  gates_.resize(0, 0);
  pool_arg_.resize(0, 0);
}

void CoreRuntime::ensure_capacity(int rows) {
  if (rows <= cap_) return;
  const int newcap = std::max(rows, std::max(64, cap_ * 2));
  const NetConfig& cfg = params_->cfg;
  auto grow = [&](Eigen::MatrixXd& m, int cols) {
    if (cols == 0) return;
    m.conservativeResize(newcap, cols);
  };
  grow(obs_, cfg.obs_dim);
  switch (cfg.core) {
    case CoreKind::cogrnn_tilde:
      grow(tilde_, cfg.obs_dim * cfg.memory.n_taus);
      if (cfg.use_conv) pool_arg_.conservativeResize(newcap, cfg.obs_dim * cfg.conv_channels);
      break;
    case CoreKind::cogrnn_F:
      break;
    case CoreKind::rnn:
      grow(h_hist_, cfg.rnn_hidden);
      break;
    case CoreKind::lstm:
      grow(h_hist_, cfg.rnn_hidden);
      grow(c_hist_, cfg.rnn_hidden);
      grow(tanh_c_hist_, cfg.rnn_hidden);
      grow(gates_, 4 * cfg.rnn_hidden);
      break;
  }
  cap_ = newcap;
}

Eigen::VectorXd CoreRuntime::step(const Eigen::VectorXd& obs) {
  const NetConfig& cfg = params_->cfg;
  if (obs.size() != cfg.obs_dim)
    throw std::invalid_argument("core step: observation dimension mismatch");
  ensure_capacity(steps_ + 1);
  const int t = steps_++;
  obs_.row(t) = obs.transpose();

  switch (cfg.core) {
    case CoreKind::cogrnn_tilde: {
      step_inplace(laplace_, *engine_, obs);
      Eigen::MatrixXd tilde = read_tilde(laplace_, *engine_);
      // flatten per input dimension: [d][tau]
      Eigen::VectorXd tv(cfg.obs_dim * cfg.memory.n_taus);
      for (int d = 0; d < cfg.obs_dim; ++d)
        tv.segment(d * cfg.memory.n_taus, cfg.memory.n_taus) = tilde.row(d);
      tilde_.row(t) = tv.transpose();
      if (!cfg.use_conv) return tv;
      const int C = cfg.conv_channels, L = cfg.conv_len, NT = cfg.memory.n_taus;
      Eigen::VectorXd feat(cfg.obs_dim * C);
      for (int d = 0; d < cfg.obs_dim; ++d) {
        for (int c = 0; c < C; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          int argp = 0;
          for (int ppos = 0; ppos + L <= NT; ++ppos) {
            double acc = 0.0;
            for (int j = 0; j < L; ++j)
              acc += params_->conv_w(c, j) * tv[d * NT + ppos + j];
            if (acc > best) {
              best = acc;
              argp = ppos;
            }
          }
          feat[d * C + c] = best;
          pool_arg_(t, d * C + c) = argp;
        }
      }
      return feat;
    }
    case CoreKind::cogrnn_F: {
      step_inplace(laplace_, *engine_, obs);
      const int ns = engine_->n_s();
      Eigen::VectorXd feat(cfg.obs_dim * ns);
      for (int d = 0; d < cfg.obs_dim; ++d)
        feat.segment(d * ns, ns) = laplace_.F.row(d);
      return feat;
    }
    case CoreKind::rnn: {
      Eigen::VectorXd pre = params_->rnn_wx * obs + params_->rnn_wh * h_ +
                            params_->rnn_b.col(0);
      h_ = pre.array().tanh();
      h_hist_.row(t) = h_.transpose();
      return h_;
    }
    case CoreKind::lstm: {
      const int H = cfg.rnn_hidden;
      Eigen::VectorXd z = params_->lstm_wx * obs + params_->lstm_wh * h_ +
                          params_->lstm_b.col(0);
      auto sigm = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
      Eigen::VectorXd gates(4 * H);
      for (int j = 0; j < H; ++j) {
        gates[j] = sigm(z[j]);                    // input
        gates[H + j] = sigm(z[H + j]);            // forget
        gates[2 * H + j] = std::tanh(z[2 * H + j]);  // cell candidate
        gates[3 * H + j] = sigm(z[3 * H + j]);    // output
      }
      c_ = gates.segment(H, H).cwiseProduct(c_) +
           gates.head(H).cwiseProduct(gates.segment(2 * H, H));
      Eigen::VectorXd tc = c_.array().tanh();
      h_ = gates.tail(H).cwiseProduct(tc);
      gates_.row(t) = gates.transpose();
      c_hist_.row(t) = c_.transpose();
      tanh_c_hist_.row(t) = tc.transpose();
      h_hist_.row(t) = h_.transpose();
      return h_;
    }
  }
  throw std::logic_error("unreachable");
}

Eigen::VectorXd CoreRuntime::core_activity(int t) const {
  const NetConfig& cfg = params_->cfg;
  switch (cfg.core) {
    case CoreKind::cogrnn_tilde:
      return tilde_.row(t).transpose();
    case CoreKind::cogrnn_F:
      throw std::logic_error("core_activity: use trajectory features for cogrnn_F");
    case CoreKind::rnn:
    case CoreKind::lstm:
      return h_hist_.row(t).transpose();
  }
  throw std::logic_error("unreachable");
}

void CoreRuntime::backward(const Eigen::MatrixXd& dfeatures,
                           AgentParams& grads) const {
  const NetConfig& cfg = params_->cfg;
  const int T = static_cast<int>(dfeatures.rows());
  if (T > steps_)
    throw std::invalid_argument("core backward: cache shorter than gradients");

  switch (cfg.core) {
    case CoreKind::cogrnn_tilde: {
      if (!cfg.use_conv) return;  // memory is frozen, nothing upstream
      const int C = cfg.conv_channels, L = cfg.conv_len, NT = cfg.memory.n_taus;
      for (int t = 0; t < T; ++t) {
        for (int d = 0; d < cfg.obs_dim; ++d) {
          for (int c = 0; c < C; ++c) {
            const double g = dfeatures(t, d * C + c);
            if (g == 0.0) continue;
            const int p = pool_arg_(t, d * C + c);
            grads.conv_w.row(c) +=
                g * tilde_.row(t).segment(d * NT + p, L);
          }
        }
      }
      return;
    }
    case CoreKind::cogrnn_F:
      return;
    case CoreKind::rnn: {
      if (!cfg.core_trainable()) return;
      const int H = cfg.rnn_hidden;
      Eigen::VectorXd dh_carry = Eigen::VectorXd::Zero(H);
      for (int t = T - 1; t >= 0; --t) {
        Eigen::VectorXd dh = dfeatures.row(t).transpose() + dh_carry;
        Eigen::VectorXd h = h_hist_.row(t).transpose();
        Eigen::VectorXd dpre = dh.cwiseProduct(
            (1.0 - h.array().square()).matrix());
        grads.rnn_wx.noalias() += dpre * obs_.row(t);
        if (t > 0)
          grads.rnn_wh.noalias() += dpre * h_hist_.row(t - 1);
        grads.rnn_b.col(0) += dpre;
        dh_carry.noalias() = params_->rnn_wh.transpose() * dpre;
      }
      return;
    }
    case CoreKind::lstm: {
      if (!cfg.core_trainable()) return;
      const int H = cfg.rnn_hidden;
      Eigen::VectorXd dh_carry = Eigen::VectorXd::Zero(H);
      Eigen::VectorXd dc_carry = Eigen::VectorXd::Zero(H);
      Eigen::VectorXd dz(4 * H);
      for (int t = T - 1; t >= 0; --t) {
        Eigen::VectorXd dh = dfeatures.row(t).transpose() + dh_carry;
        const auto gates = gates_.row(t);
        Eigen::ArrayXd gi = gates.segment(0, H).transpose().array();
        Eigen::ArrayXd gf = gates.segment(H, H).transpose().array();
        Eigen::ArrayXd gg = gates.segment(2 * H, H).transpose().array();
        Eigen::ArrayXd go = gates.segment(3 * H, H).transpose().array();
        Eigen::ArrayXd tc = tanh_c_hist_.row(t).transpose().array();

        Eigen::ArrayXd dho = dh.array();
        Eigen::ArrayXd dz_o = dho * tc * go * (1.0 - go);
        Eigen::ArrayXd dc = dc_carry.array() + dho * go * (1.0 - tc.square());
        Eigen::ArrayXd c_prev =
            t > 0 ? Eigen::ArrayXd(c_hist_.row(t - 1).transpose().array())
                  : Eigen::ArrayXd(Eigen::ArrayXd::Zero(H));
        Eigen::ArrayXd dz_f = dc * c_prev * gf * (1.0 - gf);
        Eigen::ArrayXd dz_i = dc * gg * gi * (1.0 - gi);
        Eigen::ArrayXd dz_g = dc * gi * (1.0 - gg.square());

        dz.segment(0, H) = dz_i.matrix();
        dz.segment(H, H) = dz_f.matrix();
        dz.segment(2 * H, H) = dz_g.matrix();
        dz.segment(3 * H, H) = dz_o.matrix();

        grads.lstm_wx.noalias() += dz * obs_.row(t);
        if (t > 0)
          grads.lstm_wh.noalias() += dz * h_hist_.row(t - 1);
        grads.lstm_b.col(0) += dz;
        dh_carry.noalias() = params_->lstm_wh.transpose() * dz;
        dc_carry = (dc * gf).matrix();
      }
      return;
    }
  }
}

Eigen::MatrixXd core_forward(const AgentParams& params,
                             const MemoryEngine* engine,
                             const Eigen::MatrixXd& obs_sequence) {
  CoreRuntime rt(params, engine);
  Eigen::MatrixXd feats(obs_sequence.rows(), params.cfg.feature_dim());
  for (int t = 0; t < obs_sequence.rows(); ++t)
    feats.row(t) = rt.step(obs_sequence.row(t).transpose()).transpose();
  return feats;
}

HeadsOut heads_forward(const AgentParams& params, const Eigen::VectorXd& feature) {
  if (!feature.allFinite())
    throw std::invalid_argument("heads: feature must be finite");
  HeadsOut out;
  out.hidden = (params.w_hidden * feature + params.b_hidden.col(0)).cwiseMax(0.0);
  out.logits = params.w_policy * out.hidden + params.b_policy.col(0);
  out.value = (params.w_value * out.hidden)(0) + params.b_value(0, 0);
  return out;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

ActionSample sample_action(const Eigen::VectorXd& logits, std::mt19937_64& rng) {
  const double mx = logits.maxCoeff();
  Eigen::VectorXd ex = (logits.array() - mx).exp();
  const double z = ex.sum();
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * z;
  int a = 0;
  double acc = 0.0;
  for (; a < logits.size() - 1; ++a) {
    acc += ex[a];
    if (u < acc) break;
  }
  ActionSample s;
  s.action = a;
  const double logz = std::log(z);
  s.log_prob = logits[a] - mx - logz;
  s.entropy = 0.0;
  for (int i = 0; i < logits.size(); ++i) {
    const double lp = logits[i] - mx - logz;
    s.entropy -= std::exp(lp) * lp;
  }
  return s;
}

int greedy_action(const Eigen::VectorXd& logits) {
  int a = 0;
  logits.maxCoeff(&a);
  return a;
}

AgentParams backward(const AgentParams& params, const Trajectory& traj,
                     const Eigen::MatrixXd& dlogits,
                     const Eigen::VectorXd& dvalues) {
  if (!traj.core)
    throw std::invalid_argument("backward: trajectory is missing its core cache");
  const int T = traj.length;
  if (dlogits.rows() != T || dvalues.size() != T)
    throw std::invalid_argument("backward: loss gradient length mismatch");

  AgentParams grads = params.zeros_like();
  Eigen::MatrixXd dfeat(T, params.cfg.feature_dim());
  for (int t = 0; t < T; ++t) {
    const Eigen::VectorXd dlog = dlogits.row(t).transpose();
    const Eigen::VectorXd hidden = traj.hidden.row(t).transpose();
    grads.w_policy.noalias() += dlog * hidden.transpose();
    grads.b_policy.col(0) += dlog;
    grads.w_value.noalias() += dvalues[t] * hidden.transpose();
    grads.b_value(0, 0) += dvalues[t];
    Eigen::VectorXd dhidden = params.w_policy.transpose() * dlog +
                              params.w_value.transpose() * dvalues[t];
    Eigen::VectorXd dpre =
        (hidden.array() > 0.0).select(dhidden.array(), 0.0).matrix();
    grads.w_hidden.noalias() += dpre * traj.features.row(t);
    grads.b_hidden.col(0) += dpre;
    dfeat.row(t) = (params.w_hidden.transpose() * dpre).transpose();
  }
  traj.core->backward(dfeat, grads);
  return grads;
}

}  // namespace laplace_rl
