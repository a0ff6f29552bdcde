#include "laplace_rl/trainer.hpp"

#include <cmath>
#include <random>

#include "doctest.h"

using namespace laplace_rl;

namespace {

double unif(std::mt19937_64& rng) { return (rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0; }

NetConfig tiny_net(CoreKind core) {
  NetConfig n;
  n.core = core;
  n.obs_dim = 1;
  n.n_actions = 3;
  n.hidden_size = 4;
  n.rnn_hidden = 3;
  n.memory.taustar_min = 2;
  n.memory.taustar_max = 10;
  n.memory.n_taus = 4;
  n.memory.k = 2;
  return n;
}

Trajectory make_traj(const AgentParams& params, const MemoryEngine* engine,
                     const Eigen::MatrixXd& obs, const std::vector<int>& actions,
                     const Eigen::VectorXd& rewards) {
  Trajectory traj;
  const int T = static_cast<int>(obs.rows());
  traj.core = std::make_unique<CoreRuntime>(params, engine);
  traj.length = T;
  traj.features.resize(T, params.cfg.feature_dim());
  traj.hidden.resize(T, params.cfg.hidden_size);
  traj.probs.resize(T, params.cfg.n_actions);
  traj.values.resize(T);
  traj.log_probs.resize(T);
  traj.entropies.resize(T);
  traj.rewards = rewards;
  traj.actions = actions;
  traj.total_reward = rewards.sum();
  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd feat = traj.core->step(obs.row(t).transpose());
    HeadsOut heads = heads_forward(params, feat);
    Eigen::VectorXd p = softmax(heads.logits);
    traj.features.row(t) = feat.transpose();
    traj.hidden.row(t) = heads.hidden.transpose();
    traj.probs.row(t) = p.transpose();
    traj.values[t] = heads.value;
    traj.log_probs[t] = std::log(p[actions[t]]);
    double H = 0.0;
    for (int j = 0; j < p.size(); ++j) H -= p[j] * std::log(std::max(p[j], 1e-300));
    traj.entropies[t] = H;
  }
  return traj;
}

}  // namespace

TEST_CASE("gae on the worked examples") {
  // single reward, zero values
  Eigen::VectorXd r1(1), v1(2);
  r1 << 1.0;
  v1 << 0.0, 0.0;
  Eigen::VectorXd a1 = compute_gae(r1, v1, 0.98, 0.95);
  CHECK(a1[0] == doctest::Approx(1.0).epsilon(1e-15));

  Eigen::VectorXd r2(2), v2(3);
  r2 << 0.0, 1.0;
  v2 << 0.0, 0.0, 0.0;
  Eigen::VectorXd a2 = compute_gae(r2, v2, 0.98, 0.95);
  CHECK(a2[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(a2[0] == doctest::Approx(0.931).epsilon(1e-12));

  // lambda = 0 truncates to one-step TD
  std::mt19937_64 rng(5);
  const int T = 9;
  Eigen::VectorXd r(T), v(T + 1);
  for (int t = 0; t <= T; ++t) {
    if (t < T) r[t] = unif(rng);
    v[t] = unif(rng);
  }
  Eigen::VectorXd a0 = compute_gae(r, v, 0.9, 0.0);
  for (int t = 0; t < T; ++t)
    CHECK(a0[t] == doctest::Approx(r[t] + 0.9 * v[t + 1] - v[t]).epsilon(1e-14));

  CHECK_THROWS(compute_gae(r, v.head(T), 0.9, 0.5));
}

TEST_CASE("gae telescopes to the Monte Carlo return at lambda = 1") {
  std::mt19937_64 rng(17);
  const int T = 12;
  const double gamma = 0.98;
  Eigen::VectorXd r(T), v(T + 1);
  for (int t = 0; t <= T; ++t) {
    if (t < T) r[t] = unif(rng);
    v[t] = unif(rng);
  }
  v[T] = 0.0;  // terminal
  Eigen::VectorXd adv = compute_gae(r, v, gamma, 1.0);
  Eigen::VectorXd g = returns_to_go(r, gamma);
  for (int t = 0; t < T; ++t)
    CHECK(adv[t] + v[t] == doctest::Approx(g[t]).epsilon(1e-12));
}

TEST_CASE("adam matches an independent reference implementation to 1e-12") {
  NetConfig cfg = tiny_net(CoreKind::rnn);
  std::mt19937_64 rng(3);
  AgentParams params = init_agent_params(cfg, rng);
  AdamState state = AdamState::zero(params);
  TrainConfig tc;
  tc.lr = 3e-3;

  // flat-vector reference
  std::vector<double> ref, m, v;
  params.for_each([&](const char*, const Eigen::MatrixXd& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) ref.push_back(t.data()[i]);
  });
  m.assign(ref.size(), 0.0);
  v.assign(ref.size(), 0.0);

  std::mt19937_64 grng(99);
  for (int step = 1; step <= 100; ++step) {
    AgentParams grads = params.zeros_like();
    std::vector<double> gflat;
    grads.for_each([&](const char*, Eigen::MatrixXd& t) {
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        t.data()[i] = unif(grng);
        gflat.push_back(t.data()[i]);
      }
    });
    adam_step(state, params, grads, tc);

    for (size_t i = 0; i < ref.size(); ++i) {
      m[i] = tc.adam_beta1 * m[i] + (1.0 - tc.adam_beta1) * gflat[i];
      v[i] = tc.adam_beta2 * v[i] + (1.0 - tc.adam_beta2) * gflat[i] * gflat[i];
      const double mhat = m[i] / (1.0 - std::pow(tc.adam_beta1, step));
      const double vhat = v[i] / (1.0 - std::pow(tc.adam_beta2, step));
      ref[i] -= tc.lr * mhat / (std::sqrt(vhat) + tc.adam_eps);
    }
    size_t idx = 0;
    bool ok = true;
    params.for_each([&](const char*, const Eigen::MatrixXd& t) {
      for (Eigen::Index i = 0; i < t.size(); ++i)
        ok = ok && std::abs(t.data()[i] - ref[idx++]) <= 1e-12;
    });
    CHECK(ok);
  }
}

TEST_CASE("adam: first step approximates -lr * sign(gradient)") {
  NetConfig cfg = tiny_net(CoreKind::rnn);
  std::mt19937_64 rng(4);
  AgentParams params = init_agent_params(cfg, rng);
  AgentParams before = params;
  AdamState state = AdamState::zero(params);
  TrainConfig tc;
  tc.lr = 1e-2;
  AgentParams grads = params.zeros_like();
  std::mt19937_64 grng(8);
  grads.for_each([&](const char*, Eigen::MatrixXd& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i)
      t.data()[i] = unif(grng) * 10.0 + (unif(grng) > 0 ? 0.5 : -0.5);
  });
  adam_step(state, params, grads, tc);
  std::vector<const Eigen::MatrixXd*> b, a, g;
  before.for_each([&](const char*, const Eigen::MatrixXd& t) { b.push_back(&t); });
  params.for_each([&](const char*, const Eigen::MatrixXd& t) { a.push_back(&t); });
  grads.for_each([&](const char*, const Eigen::MatrixXd& t) { g.push_back(&t); });
  for (size_t ti = 0; ti < b.size(); ++ti)
    for (Eigen::Index i = 0; i < b[ti]->size(); ++i) {
      const double delta = a[ti]->data()[i] - b[ti]->data()[i];
      const double sign = g[ti]->data()[i] > 0 ? 1.0 : -1.0;
      CHECK(delta == doctest::Approx(-tc.lr * sign).epsilon(1e-6));
    }

  // zero gradients forever leave parameters unchanged
  AgentParams frozen = params;
  AgentParams zeros = params.zeros_like();
  AdamState s2 = AdamState::zero(params);
  for (int i = 0; i < 10; ++i) adam_step(s2, params, zeros, tc);
  std::vector<const Eigen::MatrixXd*> f, p;
  frozen.for_each([&](const char*, const Eigen::MatrixXd& t) { f.push_back(&t); });
  params.for_each([&](const char*, const Eigen::MatrixXd& t) { p.push_back(&t); });
  for (size_t ti = 0; ti < f.size(); ++ti)
    CHECK((*f[ti] - *p[ti]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradient clipping rescales to the requested global norm") {
  NetConfig cfg = tiny_net(CoreKind::cogrnn_tilde);
  std::mt19937_64 rng(6);
  AgentParams g = init_agent_params(cfg, rng);
  double sq = 0.0;
  g.for_each([&](const char*, Eigen::MatrixXd& t) {
    t.setConstant(2.0);
    sq += t.squaredNorm();
  });
  const double norm = std::sqrt(sq);
  AgentParams g2 = g;
  const double reported = clip_gradients(g2, norm * 0.5);
  CHECK(reported == doctest::Approx(norm));
  double sq2 = 0.0;
  g2.for_each([&](const char*, Eigen::MatrixXd& t) { sq2 += t.squaredNorm(); });
  CHECK(std::sqrt(sq2) == doctest::Approx(norm * 0.5));

  // under the limit: untouched
  AgentParams g3 = g;
  clip_gradients(g3, norm * 10.0);
  std::vector<const Eigen::MatrixXd*> x, y;
  g.for_each([&](const char*, const Eigen::MatrixXd& t) { x.push_back(&t); });
  g3.for_each([&](const char*, const Eigen::MatrixXd& t) { y.push_back(&t); });
  for (size_t i = 0; i < x.size(); ++i)
    CHECK((*x[i] - *y[i]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a2c single-step update matches a scalar hand computation") {
  // frozen 1-unit rnn core so the whole chain is scalar
  NetConfig cfg;
  cfg.core = CoreKind::rnn;
  cfg.frozen_core = true;
  cfg.obs_dim = 1;
  cfg.n_actions = 2;
  cfg.hidden_size = 1;
  cfg.rnn_hidden = 1;
  std::mt19937_64 rng(2);
  AgentParams p = init_agent_params(cfg, rng);
  p.rnn_wx(0, 0) = 2.0;
  p.rnn_wh(0, 0) = 0.0;
  p.rnn_b(0, 0) = 0.0;
  p.w_hidden(0, 0) = 0.7;
  p.b_hidden(0, 0) = 0.1;
  p.w_policy(0, 0) = 0.4;
  p.w_policy(1, 0) = -0.3;
  p.b_policy(0, 0) = 0.05;
  p.b_policy(1, 0) = -0.02;
  p.w_value(0, 0) = 0.6;
  p.b_value(0, 0) = -0.1;

  Eigen::MatrixXd obs(1, 1);
  obs << 1.0;
  Eigen::VectorXd reward(1);
  reward << 1.0;
  std::vector<int> actions = {0};

  TrainConfig tc;
  tc.gamma = 0.98;
  tc.gae_lambda = 0.95;
  tc.lr = 1e-3;
  tc.entropy_coef = 0.01;
  tc.value_coef = 0.5;
  tc.clip_norm = 0.0;  // keep the algebra exact

  Trajectory traj = make_traj(p, nullptr, obs, actions, reward);
  AgentParams updated = p;
  AdamState opt = AdamState::zero(p);
  a2c_update(updated, opt, traj, tc, 0.0);

  // scalar chain, independently
  const double feat = std::tanh(2.0);
  const double hid = 0.7 * feat + 0.1;  // relu active
  const double z0 = 0.4 * hid + 0.05, z1 = -0.3 * hid - 0.02;
  const double mx = std::max(z0, z1);
  const double e0 = std::exp(z0 - mx), e1 = std::exp(z1 - mx);
  const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
  const double value = 0.6 * hid - 0.1;
  const double adv = 1.0 - value;  // delta with terminal bootstrap
  const double ret = adv + value;
  const double H = -(p0 * std::log(p0) + p1 * std::log(p1));
  // dlogits = adv * (p - onehot0) - ec * dH/dz
  const double dz0 = adv * (p0 - 1.0) - tc.entropy_coef * (-p0 * (std::log(p0) + H));
  const double dz1 = adv * p1 - tc.entropy_coef * (-p1 * (std::log(p1) + H));
  const double dv = 2.0 * tc.value_coef * (value - ret);
  // head gradients
  const double g_wp0 = dz0 * hid, g_wp1 = dz1 * hid;
  const double g_bp0 = dz0, g_bp1 = dz1;
  const double g_wv = dv * hid, g_bv = dv;
  const double dhid = dz0 * 0.4 + dz1 * (-0.3) + dv * 0.6;
  const double g_wh = dhid * feat, g_bh = dhid;
  // adam first step
  auto adam1 = [&](double g) {
    if (g == 0.0) return 0.0;
    const double mhat = g;  // bias corrections cancel at t = 1
    const double vhat = g * g;
    return -tc.lr * mhat / (std::sqrt(vhat) + tc.adam_eps);
  };
  CHECK(updated.w_policy(0, 0) - p.w_policy(0, 0) ==
        doctest::Approx(adam1(g_wp0)).epsilon(1e-6));
  CHECK(updated.w_policy(1, 0) - p.w_policy(1, 0) ==
        doctest::Approx(adam1(g_wp1)).epsilon(1e-6));
  CHECK(updated.b_policy(0, 0) - p.b_policy(0, 0) ==
        doctest::Approx(adam1(g_bp0)).epsilon(1e-6));
  CHECK(updated.b_policy(1, 0) - p.b_policy(1, 0) ==
        doctest::Approx(adam1(g_bp1)).epsilon(1e-6));
  CHECK(updated.w_value(0, 0) - p.w_value(0, 0) ==
        doctest::Approx(adam1(g_wv)).epsilon(1e-6));
  CHECK(updated.b_value(0, 0) - p.b_value(0, 0) ==
        doctest::Approx(adam1(g_bv)).epsilon(1e-6));
  CHECK(updated.w_hidden(0, 0) - p.w_hidden(0, 0) ==
        doctest::Approx(adam1(g_wh)).epsilon(1e-6));
  CHECK(updated.b_hidden(0, 0) - p.b_hidden(0, 0) ==
        doctest::Approx(adam1(g_bh)).epsilon(1e-6));
  // frozen core untouched
  CHECK(updated.rnn_wx(0, 0) == 2.0);
}

TEST_CASE("zero advantages with an exact value fit leave only the entropy term") {
  NetConfig cfg = tiny_net(CoreKind::cogrnn_tilde);
  MemoryConfig mc = cfg.memory;
  mc.input_dim = 1;
  MemoryEngine engine(mc);
  std::mt19937_64 rng(11);
  AgentParams p = init_agent_params(cfg, rng);
  p.w_value.setZero();
  p.b_value.setZero();  // V == 0 exactly

  Eigen::MatrixXd obs = Eigen::MatrixXd::Zero(4, 1);
  obs(0, 0) = 1.0;
  Eigen::VectorXd rewards = Eigen::VectorXd::Zero(4);  // adv == 0, ret == 0
  std::vector<int> actions = {0, 1, 2, 0};
  Trajectory traj = make_traj(p, &engine, obs, actions, rewards);

  TrainConfig tc;
  tc.entropy_coef = 0.0;
  AgentParams frozen = p;
  AdamState opt = AdamState::zero(p);
  a2c_update(p, opt, traj, tc, 0.0);
  std::vector<const Eigen::MatrixXd*> a, b;
  frozen.for_each([&](const char*, const Eigen::MatrixXd& t) { a.push_back(&t); });
  p.for_each([&](const char*, const Eigen::MatrixXd& t) { b.push_back(&t); });
  for (size_t i = 0; i < a.size(); ++i)
    CHECK((*a[i] - *b[i]).cwiseAbs().maxCoeff() == 0.0);

  // with entropy enabled the policy head moves
  TrainConfig tc2;
  tc2.entropy_coef = 0.01;
  Trajectory traj2 = make_traj(p, &engine, obs, actions, rewards);
  AgentParams p2 = p;
  AdamState opt2 = AdamState::zero(p2);
  a2c_update(p2, opt2, traj2, tc2, 0.0);
  CHECK((p2.w_policy - p.w_policy).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("doubling entropy_coef doubles the entropy gradient exactly") {
  NetConfig cfg = tiny_net(CoreKind::cogrnn_tilde);
  MemoryConfig mc = cfg.memory;
  mc.input_dim = 1;
  MemoryEngine engine(mc);
  std::mt19937_64 rng(13);
  AgentParams p = init_agent_params(cfg, rng);
  Eigen::MatrixXd obs = Eigen::MatrixXd::Zero(3, 1);
  obs(0, 0) = 1.0;
  Eigen::VectorXd rewards = Eigen::VectorXd::Zero(3);
  std::vector<int> actions = {0, 1, 2};
  Trajectory traj = make_traj(p, &engine, obs, actions, rewards);
  Eigen::VectorXd zero_w = Eigen::VectorXd::Zero(3);

  TrainConfig t1, t2;
  t1.entropy_coef = 0.02;
  t2.entropy_coef = 0.04;
  Eigen::MatrixXd d1, d2;
  Eigen::VectorXd v1, v2;
  UpdateMetrics m1, m2;
  policy_loss_grads(traj, zero_w, zero_w, false, t1, d1, v1, m1);
  policy_loss_grads(traj, zero_w, zero_w, false, t2, d2, v2, m2);
  CHECK((d2 - 2.0 * d1).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("reinforce: gamma = 1 weights every step by the terminal reward") {
  Eigen::VectorXd rewards = Eigen::VectorXd::Zero(6);
  rewards[5] = -1.0;
  Eigen::VectorXd g = returns_to_go(rewards, 1.0);
  for (int t = 0; t < 6; ++t) CHECK(g[t] == -1.0);

  Eigen::VectorXd zeros = Eigen::VectorXd::Zero(6);
  CHECK(returns_to_go(zeros, 0.9).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reinforce equals a2c with lambda = 1 and a zero value function") {
  NetConfig cfg = tiny_net(CoreKind::cogrnn_tilde);
  MemoryConfig mc = cfg.memory;
  mc.input_dim = 1;
  MemoryEngine engine(mc);
  std::mt19937_64 rng(23);
  AgentParams p = init_agent_params(cfg, rng);
  p.w_value.setZero();
  p.b_value.setZero();

  Eigen::MatrixXd obs = Eigen::MatrixXd::Zero(5, 1);
  obs(0, 0) = 1.0;
  Eigen::VectorXd rewards(5);
  rewards << 0, 0, 0.5, 0, 1.0;
  std::vector<int> actions = {0, 1, 2, 1, 0};

  TrainConfig tc;
  tc.gae_lambda = 1.0;
  tc.value_coef = 0.0;  // freeze the (zero) value function
  tc.clip_norm = 0.0;

  AgentParams pa = p, pr = p;
  AdamState oa = AdamState::zero(pa), orr = AdamState::zero(pr);
  Trajectory ta = make_traj(pa, &engine, obs, actions, rewards);
  a2c_update(pa, oa, ta, tc, 0.0);
  Trajectory tr = make_traj(pr, &engine, obs, actions, rewards);
  reinforce_update(pr, orr, tr, tc);

  std::vector<const Eigen::MatrixXd*> xa, xr;
  pa.for_each([&](const char*, const Eigen::MatrixXd& t) { xa.push_back(&t); });
  pr.for_each([&](const char*, const Eigen::MatrixXd& t) { xr.push_back(&t); });
  for (size_t i = 0; i < xa.size(); ++i)
    CHECK((*xa[i] - *xr[i]).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  NetConfig cfg = tiny_net(CoreKind::cogrnn_tilde);
  MemoryConfig mc = cfg.memory;
  mc.input_dim = 1;
  MemoryEngine engine(mc);
  std::mt19937_64 rng(31);
  AgentParams p = init_agent_params(cfg, rng);
  Eigen::MatrixXd obs = Eigen::MatrixXd::Zero(2, 1);
  obs(0, 0) = 1.0;
  Eigen::VectorXd rewards = Eigen::VectorXd::Zero(2);
  std::vector<int> actions = {0, 1};
  Trajectory traj = make_traj(p, &engine, obs, actions, rewards);
  traj.log_probs[0] = std::nan("");
  TrainConfig tc;
  AdamState opt = AdamState::zero(p);
  CHECK_THROWS_AS(a2c_update(p, opt, traj, tc, 0.0), std::runtime_error);
}

TEST_CASE("run_training: empty budget still saves an initial checkpoint") {
  EnvSpec env;
  env.task = Task::interval_timing;
  env.scale = 1.0;
  NetConfig net = tiny_net(CoreKind::cogrnn_tilde);
  TrainConfig tc;
  tc.n_trials = 0;
  int rows = 0, saves = 0;
  CheckpointSink sink;
  sink.save = [&](long trial, const AgentParams& p, const std::string&) {
    ++saves;
    CHECK(trial == 0);
    CHECK(p.all_finite());
  };
  TrainResult res = run_training(env, net, tc, 7,
                                 [&](const RunRecordRow&) { ++rows; }, sink);
  CHECK(rows == 0);
  CHECK(saves == 1);
  CHECK(res.trials_run == 0);
}

TEST_CASE("run_training is deterministic and accounts rewards faithfully") {
  EnvSpec env;
  env.task = Task::interval_timing;
  env.scale = 1.0;
  NetConfig net = tiny_net(CoreKind::cogrnn_tilde);
  TrainConfig tc;
  tc.n_trials = 25;

  auto collect = [&]() {
    std::vector<RunRecordRow> rows;
    run_training(env, net, tc, 42,
                 [&](const RunRecordRow& r) { rows.push_back(r); });
    return rows;
  };
  std::vector<RunRecordRow> a = collect(), b = collect();
  REQUIRE(a.size() == 25);
  REQUIRE(b.size() == 25);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].trial == b[i].trial);
    CHECK(a[i].reward == b[i].reward);
    CHECK(a[i].length == b[i].length);
    CHECK(a[i].policy_loss == b[i].policy_loss);
    // rewards are environment emissions
    CHECK((a[i].reward == 1.0 || a[i].reward == -1.0 || a[i].reward == 0.0));
    CHECK(a[i].length > 5);
  }
}

TEST_CASE("horizon mode runs segments across trials deterministically") {
  EnvSpec env;
  env.task = Task::interval_timing;
  env.scale = 1.0;
  NetConfig net = tiny_net(CoreKind::lstm);
  TrainConfig tc;
  tc.n_trials = 12;
  tc.update_mode = UpdateMode::horizon;
  tc.horizon = 40;

  auto collect = [&]() {
    std::vector<RunRecordRow> rows;
    run_training(env, net, tc, 9,
                 [&](const RunRecordRow& r) { rows.push_back(r); });
    return rows;
  };
  std::vector<RunRecordRow> a = collect(), b = collect();
  CHECK(a.size() == 12);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].reward == b[i].reward);
    CHECK(a[i].length == b[i].length);
  }
  // reinforce cannot run in horizon mode
  TrainConfig bad = tc;
  bad.algo = Algo::reinforce;
  CHECK_THROWS(run_training(env, net, bad, 1, nullptr));
}
