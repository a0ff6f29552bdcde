#include "laplace_rl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

#include "json.hpp"
#include "laplace_rl/io_util.hpp"
#include "laplace_rl/trainer.hpp"

namespace laplace_rl {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'L', 'R', 'L', 'A', 'C', 'T', '0', '1'};

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}
}  // namespace

void ActivityRecord::save(const std::filesystem::path& path) const {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, 8);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(trials.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(units()));
  json meta;
  meta["layer"] = layer;
  meta["units"] = units();
  meta["trials"] = json::array();
  for (const ActivityTrial& tr : trials) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tr.activity.rows()));
    put<std::int32_t>(out, tr.onset);
    put<std::int32_t>(out, tr.offset);
    put<std::int32_t>(out, tr.interval);
    put<std::int32_t>(out, tr.action);
    put<double>(out, tr.reward);
    for (Eigen::Index t = 0; t < tr.activity.rows(); ++t)
      for (Eigen::Index u = 0; u < tr.activity.cols(); ++u)
        put<double>(out, tr.activity(t, u));
    meta["trials"].push_back({{"steps", tr.activity.rows()},
                              {"onset", tr.onset},
                              {"offset", tr.offset},
                              {"interval", tr.interval},
                              {"action", tr.action},
                              {"reward", tr.reward}});
  }
  write_text_file(path.string() + ".meta.json", meta.dump(2) + "\n");
}

ActivityRecord ActivityRecord::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not an activity dump: " + path.string());
  ActivityRecord rec;
  const auto n_trials = get<std::uint32_t>(in);
  const auto n_units = get<std::uint32_t>(in);
  rec.trials.reserve(n_trials);
  for (std::uint32_t i = 0; i < n_trials; ++i) {
    ActivityTrial tr;
    const auto steps = get<std::uint32_t>(in);
    tr.onset = get<std::int32_t>(in);
    tr.offset = get<std::int32_t>(in);
    tr.interval = get<std::int32_t>(in);
    tr.action = get<std::int32_t>(in);
    tr.reward = get<double>(in);
    tr.activity.resize(steps, n_units);
    for (std::uint32_t t = 0; t < steps; ++t)
      for (std::uint32_t u = 0; u < n_units; ++u) tr.activity(t, u) = get<double>(in);
    rec.trials.push_back(std::move(tr));
  }
  if (!in) throw std::runtime_error("truncated activity dump: " + path.string());
  const auto meta_path = path.string() + ".meta.json";
  if (std::filesystem::exists(meta_path)) {
    json meta = json::parse(read_text_file(meta_path));
    rec.layer = meta.value("layer", std::string());
  }
  return rec;
}

std::string unit_class_name(UnitClass c) {
  switch (c) {
    case UnitClass::silent: return "silent";
    case UnitClass::persistent: return "persistent";
    case UnitClass::monotonic: return "monotonic";
    case UnitClass::transient: return "transient";
  }
  return "?";
}

Eigen::MatrixXd mean_traces(const ActivityRecord& record) {
  if (record.trials.empty())
    throw std::invalid_argument("mean_traces: no trials recorded");
  int len = std::numeric_limits<int>::max();
  for (const ActivityTrial& tr : record.trials)
    len = std::min(len, static_cast<int>(tr.activity.rows()) - tr.onset);
  if (len < 3) throw std::invalid_argument("mean_traces: trials too short");
  const int units = record.units();
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(units, len);
  for (const ActivityTrial& tr : record.trials)
    mean += tr.activity.block(tr.onset, 0, len, units).transpose();
  mean /= static_cast<double>(record.trials.size());
  return mean;
}

double spearman_rho(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const int n = static_cast<int>(x.size());
  auto ranks = [n](const Eigen::VectorXd& v) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
    Eigen::VectorXd r(n);
    int i = 0;
    while (i < n) {
      int j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (i + j) + 1.0;  // average rank for ties
      for (int l = i; l <= j; ++l) r[idx[l]] = avg;
      i = j + 1;
    }
    return r;
  };
  Eigen::VectorXd rx = ranks(x), ry = ranks(y);
  const double mx = rx.mean(), my = ry.mean();
  const double cov = ((rx.array() - mx) * (ry.array() - my)).sum();
  const double sx = std::sqrt((rx.array() - mx).square().sum());
  const double sy = std::sqrt((ry.array() - my).square().sum());
  if (sx == 0.0 || sy == 0.0) return 0.0;
  return cov / (sx * sy);
}

GaussFit fit_gaussian(const Eigen::VectorXd& y) {
  const int n = static_cast<int>(y.size());
  GaussFit fit;
  if (n < 5) return fit;
  Eigen::VectorXd t(n);
  for (int i = 0; i < n; ++i) t[i] = i;

  double b = y.minCoeff();
  int imax = 0;
  double a = y.maxCoeff(&imax) - b;
  if (a <= 0.0) return fit;
  double mu = imax;
  double wsum = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = std::max(y[i] - b, 0.0);
    wsum += w;
    m2 += w * (i - mu) * (i - mu);
  }
  double sigma = std::max(0.5, std::sqrt(m2 / std::max(wsum, 1e-300)));

  const double sst = (y.array() - y.mean()).square().sum();
  auto cost = [&](double aa, double mm, double ss, double bb) {
    double c = 0.0;
    for (int i = 0; i < n; ++i) {
      const double e = std::exp(-(t[i] - mm) * (t[i] - mm) / (2.0 * ss * ss));
      const double r = y[i] - (aa * e + bb);
      c += r * r;
    }
    return c;
  };

  double lambda = 1e-3;
  double c0 = cost(a, mu, sigma, b);
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::MatrixXd J(n, 4);
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) {
      const double d = t[i] - mu;
      const double e = std::exp(-d * d / (2.0 * sigma * sigma));
      r[i] = y[i] - (a * e + b);
      J(i, 0) = e;
      J(i, 1) = a * e * d / (sigma * sigma);
      J(i, 2) = a * e * d * d / (sigma * sigma * sigma);
      J(i, 3) = 1.0;
    }
    Eigen::MatrixXd H = J.transpose() * J;
    Eigen::VectorXd g = J.transpose() * r;
    H.diagonal() *= 1.0 + lambda;
    Eigen::VectorXd step = H.ldlt().solve(g);
    if (!step.allFinite()) break;
    const double a1 = a + step[0], mu1 = mu + step[1],
                 s1 = std::max(1e-3, sigma + step[2]), b1 = b + step[3];
    const double c1 = cost(a1, mu1, s1, b1);
    if (c1 < c0) {
      a = a1;
      mu = mu1;
      sigma = s1;
      b = b1;
      lambda = std::max(lambda * 0.5, 1e-12);
      if (c0 - c1 < 1e-14 * (c0 + 1e-300)) {
        c0 = c1;
        break;
      }
      c0 = c1;
    } else {
      lambda *= 4.0;
      if (lambda > 1e14) break;
    }
  }
  fit.amp = a;
  fit.mu = mu;
  fit.sigma = std::abs(sigma);
  fit.base = b;
  fit.r2 = sst > 0.0 ? 1.0 - c0 / sst : 0.0;
  fit.converged = std::isfinite(a) && std::isfinite(mu) && std::isfinite(sigma) &&
                  fit.sigma > 0.0;
  return fit;
}

std::vector<CellStats> classify_units(const ActivityRecord& record,
                                      const ClassifyThresholds& th) {
  std::map<int, int> per_condition;
  for (const ActivityTrial& tr : record.trials) ++per_condition[tr.interval];
  for (const auto& [interval, count] : per_condition)
    if (count < th.min_trials_per_condition)
      throw std::invalid_argument(
          "classify_units: too few trials for interval " + std::to_string(interval) +
          " (" + std::to_string(count) + " < " +
          std::to_string(th.min_trials_per_condition) + ")");

  const Eigen::MatrixXd traces = mean_traces(record);
  const int units = static_cast<int>(traces.rows());
  const int len = static_cast<int>(traces.cols());
  const double global_peak = traces.cwiseAbs().maxCoeff();

  Eigen::VectorXd time(len);
  for (int i = 0; i < len; ++i) time[i] = i;

  std::vector<CellStats> out;
  out.reserve(units);
  for (int u = 0; u < units; ++u) {
    CellStats cs;
    cs.unit = u;
    const Eigen::VectorXd y = traces.row(u).transpose();
    const double peak_mag = y.cwiseAbs().maxCoeff();
    if (global_peak <= 0.0 || peak_mag < th.silent_eps * global_peak) {
      cs.klass = UnitClass::silent;
      out.push_back(cs);
      continue;
    }
    const double lo = y.minCoeff(), hi = y.maxCoeff();
    const double range = hi - lo;
    if (range < 1e-12 * peak_mag) {
      cs.klass = UnitClass::persistent;
      out.push_back(cs);
      continue;
    }
    Eigen::VectorXd norm = (y.array() - lo) / range;  // affine-invariant
    const double mean = norm.mean();
    const double sd = std::sqrt((norm.array() - mean).square().sum() / len);
    if (mean > 0.0 && sd / mean < th.persistent_cv) {
      cs.klass = UnitClass::persistent;
      out.push_back(cs);
      continue;
    }
    if (std::abs(spearman_rho(norm, time)) >= th.monotonic_rho) {
      cs.klass = UnitClass::monotonic;
      out.push_back(cs);
      continue;
    }
    cs.klass = UnitClass::transient;
    GaussFit fit = fit_gaussian(norm);
    cs.peak = fit.mu;
    cs.std_dev = fit.sigma;
    cs.r2 = fit.r2;
    cs.fit_ok = fit.converged && fit.r2 >= th.fit_r2 && fit.mu >= 0.0 &&
                fit.mu < len && fit.sigma > 0.0;
    out.push_back(cs);
  }
  return out;
}

Regression peak_width_regression(const std::vector<CellStats>& cells) {
  std::vector<double> xs, ys;
  for (const CellStats& c : cells)
    if (c.klass == UnitClass::transient && c.fit_ok) {
      xs.push_back(c.peak);
      ys.push_back(c.std_dev);
    }
  Regression reg;
  reg.n = static_cast<int>(xs.size());
  if (reg.n < 5)
    throw std::invalid_argument("peak_width_regression: needs >= 5 fitted transient cells, got " +
                                std::to_string(reg.n));
  const int n = reg.n;
  double mx = 0, my = 0;
  for (int i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0)
    throw std::invalid_argument("peak_width_regression: degenerate (all peaks equal)");
  reg.slope = sxy / sxx;
  reg.intercept = my - reg.slope * mx;
  reg.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return reg;
}

std::vector<PsychometricPoint> psychometric_curve(
    const std::vector<EvalTrial>& trials, int min_trials) {
  std::map<int, std::pair<int, int>> counts;  // interval -> (n, n_long)
  for (const EvalTrial& t : trials) {
    auto& c = counts[t.interval1];
    ++c.first;
    if (t.action == kRight) ++c.second;
  }
  std::vector<PsychometricPoint> points;
  for (const auto& [interval, c] : counts) {
    if (c.first < min_trials)
      throw std::invalid_argument("psychometric_curve: interval " +
                                  std::to_string(interval) + " has only " +
                                  std::to_string(c.first) + " trials");
    PsychometricPoint p;
    p.interval = interval;
    p.n = c.first;
    p.p_long = static_cast<double>(c.second) / c.first;
    const double half = 1.96 * std::sqrt(p.p_long * (1.0 - p.p_long) / c.first);
    p.ci_lo = std::max(0.0, p.p_long - half);
    p.ci_hi = std::min(1.0, p.p_long + half);
    points.push_back(p);
  }
  return points;
}

EvalSummary evaluate_policy(const ExperimentConfig& config,
                            const AgentParams& params, double scale,
                            int n_trials, std::uint64_t seed,
                            ActivityRecord* activity) {
  EnvSpec es = config.env;
  es.scale = scale;
  es.seed = mix_seed(es.seed, mix_seed(seed, 0xE1A1));
  Env env(es);

  std::unique_ptr<MemoryEngine> engine;
  if (config.net.core == CoreKind::cogrnn_tilde ||
      config.net.core == CoreKind::cogrnn_F) {
    MemoryConfig mc = config.net.memory;
    mc.input_dim = config.net.obs_dim;
    engine = std::make_unique<MemoryEngine>(mc);
  }
  if (activity) {
    activity->layer = config.net.core == CoreKind::cogrnn_tilde ? "tilde"
                      : config.net.core == CoreKind::cogrnn_F   ? "F"
                                                                : "hidden";
    activity->trials.clear();
  }

  std::mt19937_64 rng(mix_seed(seed, 0xE7A1));
  EvalSummary summary;
  summary.n_trials = n_trials;
  for (int i = 0; i < n_trials; ++i) {
    Trajectory traj = rollout_trial(env, params, engine.get(), rng, true);
    EvalTrial row;
    row.interval1 = traj.info.interval1;
    row.interval2 = traj.info.interval2;
    row.action = traj.info.chosen_action;
    row.correct_action = traj.info.correct_action;
    row.reward = traj.total_reward;
    row.length = traj.length;
    row.response_elapsed = traj.info.response_elapsed;
    summary.trials.push_back(row);
    summary.mean_reward += traj.total_reward;
    if (traj.total_reward > 0.0) summary.accuracy += 1.0;
    if (activity) {
      ActivityTrial at;
      const bool use_features = config.net.core == CoreKind::cogrnn_F;
      const int units = use_features ? config.net.feature_dim()
                        : config.net.core == CoreKind::cogrnn_tilde
                            ? config.net.obs_dim * config.net.memory.n_taus
                            : config.net.rnn_hidden;
      at.activity.resize(traj.length, units);
      for (int t = 0; t < traj.length; ++t) {
        if (use_features)
          at.activity.row(t) = traj.features.row(t);
        else
          at.activity.row(t) = traj.core->core_activity(t).transpose();
      }
      at.onset = env.scaled(es.fixation);
      at.interval = traj.info.interval1;
      at.offset = at.onset + std::max(traj.info.interval1, 0);
      at.action = traj.info.chosen_action;
      at.reward = traj.total_reward;
      activity->trials.push_back(std::move(at));
    }
  }
  summary.mean_reward /= std::max(1, n_trials);
  summary.accuracy /= std::max(1, n_trials);
  return summary;
}

std::vector<ScaleAccuracy> cross_scale_eval(const Checkpoint& ck,
                                            const std::vector<double>& scales,
                                            int n_trials, std::uint64_t seed) {
  std::vector<ScaleAccuracy> out;
  for (size_t i = 0; i < scales.size(); ++i) {
    const double s = scales[i];
    EvalSummary ev = evaluate_policy(ck.config, ck.params, s, n_trials,
                                     mix_seed(seed, i));
    ScaleAccuracy sa;
    sa.scale = s;
    sa.accuracy = ev.accuracy;
    sa.mean_reward = ev.mean_reward;
    sa.n_trials = ev.n_trials;
    if (ck.config.net.core == CoreKind::cogrnn_tilde ||
        ck.config.net.core == CoreKind::cogrnn_F) {
      int max_base = 0;
      for (int d : ck.config.env.timing_durations) max_base = std::max(max_base, d);
      sa.out_of_range = s * max_base > ck.config.net.memory.taustar_max ||
                        s * 1.0 < ck.config.net.memory.taustar_min;
      if (sa.out_of_range)
        std::fprintf(stderr,
                     "warning: scale %g pushes durations outside [tau*min, tau*max]; "
                     "invariance is not expected\n",
                     s);
    }
    out.push_back(sa);
  }
  return out;
}

CurveAggregate aggregate_curves(const std::vector<std::vector<double>>& rewards,
                                int window) {
  CurveAggregate agg;
  agg.n_runs = static_cast<int>(rewards.size());
  if (rewards.empty()) return agg;
  size_t len = rewards.front().size();
  for (const auto& r : rewards) len = std::min(len, r.size());
  // rolling mean per run, then mean/stderr across runs
  std::vector<std::vector<double>> rolled(rewards.size());
  for (size_t k = 0; k < rewards.size(); ++k) {
    double acc = 0.0;
    rolled[k].resize(len);
    for (size_t i = 0; i < len; ++i) {
      acc += rewards[k][i];
      if (i >= static_cast<size_t>(window)) acc -= rewards[k][i - window];
      rolled[k][i] = acc / std::min<size_t>(i + 1, window);
    }
  }
  for (size_t i = 0; i < len; ++i) {
    double m = 0.0;
    for (const auto& r : rolled) m += r[i];
    m /= agg.n_runs;
    double var = 0.0;
    for (const auto& r : rolled) var += (r[i] - m) * (r[i] - m);
    const double se =
        agg.n_runs > 1 ? std::sqrt(var / (agg.n_runs - 1)) / std::sqrt(agg.n_runs)
                       : 0.0;
    agg.trial.push_back(static_cast<long>(i));
    agg.mean.push_back(m);
    agg.stderr_.push_back(se);
  }
  return agg;
}

long trials_to_criterion(const std::vector<double>& rewards, int window,
                         double threshold) {
  if (static_cast<int>(rewards.size()) < window) return -1;
  double acc = 0.0;
  for (size_t i = 0; i < rewards.size(); ++i) {
    acc += rewards[i];
    if (i >= static_cast<size_t>(window)) acc -= rewards[i - window];
    if (i + 1 >= static_cast<size_t>(window) && acc / window >= threshold)
      return static_cast<long>(i + 1);
  }
  return -1;
}

}  // namespace laplace_rl
