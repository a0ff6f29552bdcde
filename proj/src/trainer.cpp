#include "laplace_rl/trainer.hpp"

#include <cmath>
#include <deque>
#include <sstream>
#include <stdexcept>

namespace laplace_rl {

std::string algo_name(Algo a) { return a == Algo::a2c ? "a2c" : "reinforce"; }

Algo algo_from_name(const std::string& name) {
  if (name == "a2c") return Algo::a2c;
  if (name == "reinforce") return Algo::reinforce;
  throw std::invalid_argument("unknown algorithm: " + name);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Eigen::VectorXd compute_gae(const Eigen::VectorXd& rewards,
                            const Eigen::VectorXd& values, double gamma,
                            double lambda) {
  const int T = static_cast<int>(rewards.size());
  if (values.size() != T + 1)
    throw std::invalid_argument("gae: values must carry a terminal bootstrap");
  Eigen::VectorXd adv(T);
  double acc = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    const double delta = rewards[t] + gamma * values[t + 1] - values[t];
    acc = delta + gamma * lambda * acc;
    adv[t] = acc;
  }
  return adv;
}

Eigen::VectorXd compute_gae_masked(const Eigen::VectorXd& rewards,
                                   const Eigen::VectorXd& values,
                                   const std::vector<bool>& dones, double gamma,
                                   double lambda) {
  const int T = static_cast<int>(rewards.size());
  if (values.size() != T + 1 || static_cast<int>(dones.size()) != T)
    throw std::invalid_argument("gae: length mismatch");
  Eigen::VectorXd adv(T);
  double acc = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    const double mask = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * mask * values[t + 1] - values[t];
    acc = delta + gamma * lambda * mask * acc;
    adv[t] = acc;
  }
  return adv;
}

Eigen::VectorXd returns_to_go(const Eigen::VectorXd& rewards, double gamma) {
  Eigen::VectorXd g(rewards.size());
  double acc = 0.0;
  for (int t = static_cast<int>(rewards.size()) - 1; t >= 0; --t) {
    acc = rewards[t] + gamma * acc;
    g[t] = acc;
  }
  return g;
}

AdamState AdamState::zero(const AgentParams& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(AdamState& state, AgentParams& params, const AgentParams& grads,
               const TrainConfig& cfg) {
  ++state.t;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  // visit params / m / v / grads in lockstep (identical tensor order)
  std::vector<Eigen::MatrixXd*> ps, ms, vs;
  std::vector<const Eigen::MatrixXd*> gs;
  params.for_each([&](const char*, Eigen::MatrixXd& t) { ps.push_back(&t); });
  state.m.for_each([&](const char*, Eigen::MatrixXd& t) { ms.push_back(&t); });
  state.v.for_each([&](const char*, Eigen::MatrixXd& t) { vs.push_back(&t); });
  grads.for_each([&](const char*, const Eigen::MatrixXd& t) { gs.push_back(&t); });
  for (size_t i = 0; i < ps.size(); ++i) {
    *ms[i] = b1 * *ms[i] + (1.0 - b1) * *gs[i];
    *vs[i] = b2 * *vs[i] + (1.0 - b2) * gs[i]->cwiseProduct(*gs[i]);
    Eigen::ArrayXXd mhat = ms[i]->array() / corr1;
    Eigen::ArrayXXd vhat = vs[i]->array() / corr2;
    *ps[i] -= (cfg.lr * mhat / (vhat.sqrt() + cfg.adam_eps)).matrix();
  }
}

double clip_gradients(AgentParams& grads, double max_norm) {
  double sq = 0.0;
  grads.for_each([&](const char*, Eigen::MatrixXd& g) { sq += g.squaredNorm(); });
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    grads.for_each([&](const char*, Eigen::MatrixXd& g) { g *= s; });
  }
  return norm;
}

void policy_loss_grads(const Trajectory& traj, const Eigen::VectorXd& weights,
                       const Eigen::VectorXd& returns, bool with_value,
                       const TrainConfig& cfg, Eigen::MatrixXd& dlogits,
                       Eigen::VectorXd& dvalues, UpdateMetrics& metrics) {
  const int T = traj.length;
  const int A = static_cast<int>(traj.probs.cols());
  dlogits.setZero(T, A);
  dvalues.setZero(T);
  metrics = {};
  for (int t = 0; t < T; ++t) {
    const Eigen::VectorXd p = traj.probs.row(t).transpose();
    // policy term
    Eigen::VectorXd dpol = weights[t] * p;
    dpol[traj.actions[t]] -= weights[t];
    // entropy term: dH/dz_j = -p_j (log p_j + H)
    double H = traj.entropies[t];
    Eigen::VectorXd dent(A);
    for (int j = 0; j < A; ++j) {
      const double lp = std::log(std::max(p[j], 1e-300));
      dent[j] = -p[j] * (lp + H);
    }
    dlogits.row(t) = (dpol - cfg.entropy_coef * dent).transpose();
    metrics.policy_loss -= weights[t] * traj.log_probs[t];
    metrics.entropy += H;
    if (with_value) {
      const double diff = traj.values[t] - returns[t];
      dvalues[t] = 2.0 * cfg.value_coef * diff;
      metrics.value_loss += diff * diff;
    }
  }
}

namespace {

UpdateMetrics apply_update(AgentParams& params, AdamState& opt,
                           const Trajectory& traj, const Eigen::VectorXd& weights,
                           const Eigen::VectorXd& returns, bool with_value,
                           const TrainConfig& cfg) {
  Eigen::MatrixXd dlogits;
  Eigen::VectorXd dvalues;
  UpdateMetrics metrics;
  policy_loss_grads(traj, weights, returns, with_value, cfg, dlogits, dvalues,
                    metrics);
  const double total = metrics.policy_loss + cfg.value_coef * metrics.value_loss -
                       cfg.entropy_coef * metrics.entropy;
  if (!std::isfinite(total)) {
    std::ostringstream os;
    os << "update aborted: non-finite loss (policy=" << metrics.policy_loss
       << " value=" << metrics.value_loss << " entropy=" << metrics.entropy
       << " trial_len=" << traj.length << ")";
    throw std::runtime_error(os.str());
  }
  AgentParams grads = backward(params, traj, dlogits, dvalues);
  metrics.grad_norm = clip_gradients(grads, cfg.clip_norm);
  adam_step(opt, params, grads, cfg);
  return metrics;
}

}  // namespace

UpdateMetrics a2c_update(AgentParams& params, AdamState& opt,
                         const Trajectory& traj, const TrainConfig& cfg,
                         double bootstrap_value) {
  const int T = traj.length;
  Eigen::VectorXd values_ext(T + 1);
  values_ext.head(T) = traj.values;
  values_ext[T] = bootstrap_value;
  Eigen::VectorXd adv =
      traj.dones.empty()
          ? compute_gae(traj.rewards, values_ext, cfg.gamma, cfg.gae_lambda)
          : compute_gae_masked(traj.rewards, values_ext, traj.dones, cfg.gamma,
                               cfg.gae_lambda);
  Eigen::VectorXd returns = adv + traj.values;
  return apply_update(params, opt, traj, adv, returns, true, cfg);
}

UpdateMetrics reinforce_update(AgentParams& params, AdamState& opt,
                               const Trajectory& traj, const TrainConfig& cfg) {
  Eigen::VectorXd g = returns_to_go(traj.rewards, cfg.gamma);
  return apply_update(params, opt, traj, g, g, false, cfg);
}

namespace {

double forward_loss(const AgentParams& params, const MemoryEngine* engine,
                    const Eigen::MatrixXd& obs, const std::vector<int>& actions,
                    const Eigen::VectorXd& weights, const Eigen::VectorXd& returns,
                    bool with_value, const TrainConfig& cfg) {
  CoreRuntime core(params, engine);
  double loss = 0.0;
  for (int t = 0; t < obs.rows(); ++t) {
    Eigen::VectorXd feat = core.step(obs.row(t).transpose());
    HeadsOut heads = heads_forward(params, feat);
    const Eigen::VectorXd logits = heads.logits;
    const double mx = logits.maxCoeff();
    const double logz = std::log((logits.array() - mx).exp().sum());
    const double logp = logits[actions[t]] - mx - logz;
    double H = 0.0;
    for (int j = 0; j < logits.size(); ++j) {
      const double lp = logits[j] - mx - logz;
      H -= std::exp(lp) * lp;
    }
    loss += -weights[t] * logp - cfg.entropy_coef * H;
    if (with_value) {
      const double diff = heads.value - returns[t];
      loss += cfg.value_coef * diff * diff;
    }
  }
  return loss;
}

}  // namespace

double a2c_loss(const AgentParams& params, const MemoryEngine* engine,
                const Eigen::MatrixXd& obs, const std::vector<int>& actions,
                const Eigen::VectorXd& advantages, const Eigen::VectorXd& returns,
                const TrainConfig& cfg) {
  return forward_loss(params, engine, obs, actions, advantages, returns, true, cfg);
}

double reinforce_loss(const AgentParams& params, const MemoryEngine* engine,
                      const Eigen::MatrixXd& obs, const std::vector<int>& actions,
                      const Eigen::VectorXd& returns, const TrainConfig& cfg) {
  return forward_loss(params, engine, obs, actions, returns, returns, false, cfg);
}

Trajectory rollout_trial(Env& env, const AgentParams& params,
                         const MemoryEngine* engine, std::mt19937_64& rng,
                         bool greedy) {
  Trajectory traj;
  traj.core = std::make_unique<CoreRuntime>(params, engine);
  const int A = params.cfg.n_actions;

  std::vector<double> values, log_probs, entropies, rewards;
  std::vector<Eigen::VectorXd> features, hiddens, probs;
  std::vector<int> actions;

  StepResult r = env.reset();
  while (!r.done) {
    Eigen::VectorXd feat = traj.core->step(r.observation);
    HeadsOut heads = heads_forward(params, feat);
    ActionSample s;
    if (greedy) {
      s.action = greedy_action(heads.logits);
      const Eigen::VectorXd p = softmax(heads.logits);
      s.log_prob = std::log(std::max(p[s.action], 1e-300));
      s.entropy = 0.0;
      for (int j = 0; j < A; ++j)
        if (p[j] > 0.0) s.entropy -= p[j] * std::log(p[j]);
    } else {
      s = sample_action(heads.logits, rng);
    }
    features.push_back(std::move(feat));
    hiddens.push_back(std::move(heads.hidden));
    probs.push_back(softmax(heads.logits));
    values.push_back(heads.value);
    actions.push_back(s.action);
    log_probs.push_back(s.log_prob);
    entropies.push_back(s.entropy);

    r = env.step(s.action);
    rewards.push_back(r.reward);
    traj.total_reward += r.reward;
  }

  const int T = static_cast<int>(actions.size());
  traj.length = T;
  traj.info = r.info;
  traj.features.resize(T, params.cfg.feature_dim());
  traj.hidden.resize(T, params.cfg.hidden_size);
  traj.probs.resize(T, A);
  traj.values.resize(T);
  traj.log_probs.resize(T);
  traj.entropies.resize(T);
  traj.rewards.resize(T);
  traj.actions = std::move(actions);
  for (int t = 0; t < T; ++t) {
    traj.features.row(t) = features[t].transpose();
    traj.hidden.row(t) = hiddens[t].transpose();
    traj.probs.row(t) = probs[t].transpose();
    traj.values[t] = values[t];
    traj.log_probs[t] = log_probs[t];
    traj.entropies[t] = entropies[t];
    traj.rewards[t] = rewards[t];
  }
  return traj;
}

TrainResult run_training(const EnvSpec& env_spec, const NetConfig& net_cfg,
                         const TrainConfig& cfg, std::uint64_t seed,
                         const std::function<void(const RunRecordRow&)>& on_trial,
                         const CheckpointSink& checkpoints) {
  if (cfg.algo == Algo::reinforce && cfg.update_mode == UpdateMode::horizon)
    throw std::invalid_argument("run_training: reinforce supports per-trial updates only");

  std::mt19937_64 init_rng(mix_seed(seed, 1));
  std::mt19937_64 action_rng(mix_seed(seed, 2));
  EnvSpec es = env_spec;
  es.seed = mix_seed(env_spec.seed, mix_seed(seed, 3));
  Env env(es);

  std::unique_ptr<MemoryEngine> engine;
  if (net_cfg.core == CoreKind::cogrnn_tilde || net_cfg.core == CoreKind::cogrnn_F) {
    MemoryConfig mc = net_cfg.memory;
    mc.input_dim = net_cfg.obs_dim;
    engine = std::make_unique<MemoryEngine>(mc);
  }
  NetConfig nc = net_cfg;
  nc.obs_dim = env.observation_dim();
  nc.n_actions = env.action_count();

  TrainResult result;
  result.params = init_agent_params(nc, init_rng);
  AdamState opt = AdamState::zero(result.params);

  auto rng_state = [&]() {
    std::ostringstream os;
    os << action_rng;
    return os.str();
  };

  std::deque<double> window;
  double window_sum = 0.0;

  if (cfg.update_mode == UpdateMode::per_trial) {
    for (long trial = 0; trial < cfg.n_trials; ++trial) {
      Trajectory traj = rollout_trial(env, result.params, engine.get(),
                                      action_rng, false);
      UpdateMetrics m = cfg.algo == Algo::a2c
                            ? a2c_update(result.params, opt, traj, cfg, 0.0)
                            : reinforce_update(result.params, opt, traj, cfg);
      ++result.trials_run;
      if (on_trial)
        on_trial({trial, traj.total_reward, traj.length, m.policy_loss,
                  m.value_loss, m.entropy});
      window.push_back(traj.total_reward);
      window_sum += traj.total_reward;
      if (static_cast<int>(window.size()) > cfg.criterion_window) {
        window_sum -= window.front();
        window.pop_front();
      }
      if (result.trials_to_criterion < 0 &&
          static_cast<int>(window.size()) == cfg.criterion_window &&
          window_sum / cfg.criterion_window >= cfg.criterion_reward) {
        result.trials_to_criterion = trial + 1;
        if (cfg.stop_on_criterion) {
          if (checkpoints.save)
            checkpoints.save(trial + 1, result.params, rng_state());
          return result;
        }
      }
      if (checkpoints.save && cfg.checkpoint_every > 0 &&
          (trial + 1) % cfg.checkpoint_every == 0)
        checkpoints.save(trial + 1, result.params, rng_state());
    }
  } else {
    // horizon mode: segments of fixed length crossing trial boundaries,
    // value bootstrap at segment ends, truncated BPTT at segment boundaries
    long trial = 0;
    bool trial_open = false;
    double trial_reward = 0.0;
    int trial_len = 0;
    UpdateMetrics last_m{};
    StepResult r;
    std::unique_ptr<CoreRuntime> core;

    while (trial < cfg.n_trials) {
      Trajectory traj;
      if (!core) {
        core = std::make_unique<CoreRuntime>(result.params, engine.get());
        r = env.reset();
        trial_open = true;
        trial_reward = 0.0;
        trial_len = 0;
      }
      traj.core = std::move(core);
      traj.core->start_segment();

      std::vector<Eigen::VectorXd> features, hiddens, probs;
      std::vector<double> values, log_probs, entropies, rewards;
      std::vector<int> actions;
      std::vector<bool> dones;
      std::vector<RunRecordRow> finished;

      while (static_cast<int>(actions.size()) < cfg.horizon &&
             trial + static_cast<long>(finished.size()) < cfg.n_trials) {
        Eigen::VectorXd feat = traj.core->step(r.observation);
        HeadsOut heads = heads_forward(result.params, feat);
        ActionSample s = sample_action(heads.logits, action_rng);
        features.push_back(std::move(feat));
        hiddens.push_back(std::move(heads.hidden));
        probs.push_back(softmax(heads.logits));
        values.push_back(heads.value);
        actions.push_back(s.action);
        log_probs.push_back(s.log_prob);
        entropies.push_back(s.entropy);
        r = env.step(s.action);
        rewards.push_back(r.reward);
        dones.push_back(r.done);
        trial_reward += r.reward;
        ++trial_len;
        if (r.done) {
          finished.push_back({0, trial_reward, trial_len, 0, 0, 0});
          r = env.reset();
          trial_reward = 0.0;
          trial_len = 0;
        }
      }

      const int T = static_cast<int>(actions.size());
      if (T == 0) break;
      traj.length = T;
      traj.features.resize(T, result.params.cfg.feature_dim());
      traj.hidden.resize(T, result.params.cfg.hidden_size);
      traj.probs.resize(T, result.params.cfg.n_actions);
      traj.values.resize(T);
      traj.log_probs.resize(T);
      traj.entropies.resize(T);
      traj.rewards.resize(T);
      traj.actions = actions;
      traj.dones = dones;
      for (int t = 0; t < T; ++t) {
        traj.features.row(t) = features[t].transpose();
        traj.hidden.row(t) = hiddens[t].transpose();
        traj.probs.row(t) = probs[t].transpose();
        traj.values[t] = values[t];
        traj.log_probs[t] = log_probs[t];
        traj.entropies[t] = entropies[t];
        traj.rewards[t] = rewards[t];
      }
      double bootstrap = 0.0;
      if (!dones.back()) {
        // peek V(next state) without disturbing the recurrent state
        CoreState snap = traj.core->state();
        Eigen::VectorXd feat = traj.core->step(r.observation);
        bootstrap = heads_forward(result.params, feat).value;
        traj.core->set_state(snap);
      }
      last_m = a2c_update(result.params, opt, traj, cfg, bootstrap);

      for (auto row : finished) {
        row.trial = trial;
        row.policy_loss = last_m.policy_loss;
        row.value_loss = last_m.value_loss;
        row.entropy = last_m.entropy;
        if (on_trial) on_trial(row);
        window.push_back(row.reward);
        window_sum += row.reward;
        if (static_cast<int>(window.size()) > cfg.criterion_window) {
          window_sum -= window.front();
          window.pop_front();
        }
        if (result.trials_to_criterion < 0 &&
            static_cast<int>(window.size()) == cfg.criterion_window &&
            window_sum / cfg.criterion_window >= cfg.criterion_reward)
          result.trials_to_criterion = trial + 1;
        ++trial;
        ++result.trials_run;
        if (checkpoints.save && cfg.checkpoint_every > 0 &&
            trial % cfg.checkpoint_every == 0)
          checkpoints.save(trial, result.params, rng_state());
      }
      if (result.trials_to_criterion >= 0 && cfg.stop_on_criterion) break;

      // keep the recurrent state across segments within a trial
      core = std::move(traj.core);
      if (dones.back()) core.reset();
    }
  }

  if (checkpoints.save)
    checkpoints.save(result.trials_run, result.params, rng_state());
  return result;
}

}  // namespace laplace_rl
