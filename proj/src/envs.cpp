#include "laplace_rl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace laplace_rl {

std::string task_name(Task task) {
  switch (task) {
    case Task::interval_timing: return "interval_timing";
    case Task::interval_discrimination: return "interval_discrimination";
    case Task::delayed_match_to_sample: return "delayed_match_to_sample";
    case Task::interval_reproduction: return "interval_reproduction";
  }
  return "?";
}

Task task_from_name(const std::string& name) {
  if (name == "interval_timing") return Task::interval_timing;
  if (name == "interval_discrimination") return Task::interval_discrimination;
  if (name == "delayed_match_to_sample") return Task::delayed_match_to_sample;
  if (name == "interval_reproduction") return Task::interval_reproduction;
  throw std::invalid_argument("unknown task: " + name);
}

namespace {

// deterministic integer draw in [0, n)
int draw(std::mt19937_64& rng, int n) {
  const std::uint64_t span = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return static_cast<int>(v % span);
}

}  // namespace

Env::Env(EnvSpec spec) : spec_(std::move(spec)), rng_(spec_.seed) {
  if (spec_.scale <= 0.0) throw std::invalid_argument("env: scale must be > 0");
  if (spec_.timing_durations.size() < 2 ||
      spec_.timing_durations.size() % 2 != 0)
    throw std::invalid_argument("env: timing_durations must have even size >= 2");
  if (spec_.discrimination_durations.size() < 2)
    throw std::invalid_argument("env: discrimination_durations needs >= 2 values");
  if (spec_.reproduction_intervals.empty())
    throw std::invalid_argument("env: reproduction_intervals must not be empty");
}

Env make_env(const EnvSpec& spec) { return Env(spec); }

int Env::scaled(int base_steps) const {
  return std::max(1, static_cast<int>(std::floor(spec_.scale * base_steps + 0.5)));
}

int Env::observation_dim() const {
  return spec_.task == Task::delayed_match_to_sample ? 3 : 1;
}

int Env::action_count() const {
  return spec_.task == Task::interval_reproduction ? 2 : 3;
}

StepResult Env::reset() {
  info_ = TrialInfo{};
  info_.trial_id = trial_counter_++;
  t_ = 0;
  in_trial_ = true;
  pulse_a_ = pulse_b_ = pulse_c_ = pulse_d_ = -1;
  sample_begin_ = sample_end_ = test_begin_ = test_end_ = 0;

  const int fix = scaled(spec_.fixation);
  const int win = scaled(spec_.response_window);

  switch (spec_.task) {
    case Task::interval_timing: {
      const auto& ds = spec_.timing_durations;
      const int pick = draw(rng_, static_cast<int>(ds.size()));
      const int dur = scaled(ds[pick]);
      info_.interval1 = dur;
      // sorted base durations: first half short -> left, second half long -> right
      info_.correct_action = pick < static_cast<int>(ds.size()) / 2 ? kLeft : kRight;
      pulse_a_ = fix;             // interval onset
      pulse_b_ = fix + dur;       // interval offset, first step of the delay
      window_begin_ = pulse_b_ + scaled(spec_.timing_delay);
      window_end_ = window_begin_ + win;
      break;
    }
    case Task::interval_discrimination: {
      const auto& ds = spec_.discrimination_durations;
      const int i = draw(rng_, static_cast<int>(ds.size()));
      int j = draw(rng_, static_cast<int>(ds.size()) - 1);
      if (j >= i) ++j;  // two distinct durations
      const int d1 = scaled(ds[i]), d2 = scaled(ds[j]);
      info_.interval1 = d1;
      info_.interval2 = d2;
      info_.correct_action = d1 > d2 ? kLeft : kRight;
      pulse_a_ = fix;
      pulse_b_ = fix + d1;
      pulse_c_ = pulse_b_ + scaled(spec_.discrimination_delay);
      pulse_d_ = pulse_c_ + d2;
      window_begin_ = pulse_d_;
      window_end_ = window_begin_ + win;
      break;
    }
    case Task::delayed_match_to_sample: {
      info_.sample_angle = draw(rng_, 2) * 180;
      const bool match = draw(rng_, 2) == 0;
      info_.test_angle = match ? info_.sample_angle : 180 - info_.sample_angle;
      info_.correct_action = match ? kLeft : kRight;
      sample_begin_ = fix;
      sample_end_ = sample_begin_ + scaled(spec_.dms_sample);
      test_begin_ = sample_end_ + scaled(spec_.dms_delay);
      test_end_ = test_begin_ + scaled(spec_.dms_test);
      window_begin_ = test_end_;
      window_end_ = window_begin_ + win;
      break;
    }
    case Task::interval_reproduction: {
      const auto& is = spec_.reproduction_intervals;
      const int dur = scaled(is[draw(rng_, static_cast<int>(is.size()))]);
      info_.interval1 = dur;
      info_.correct_action = kRespond;
      pulse_a_ = fix;
      pulse_b_ = fix + dur;  // offset pulse, reproduction starts here
      window_begin_ = pulse_b_;
      window_end_ = window_begin_ +
                    std::max(1, static_cast<int>(std::floor(
                                    spec_.reproduction_window_factor * dur + 0.5)));
      break;
    }
  }

  StepResult r;
  r.observation = observation_at(0);
  r.reward = 0.0;
  r.done = false;
  info_.t = 0;
  info_.phase = phase_at(0);
  r.info = info_;
  return r;
}

Eigen::VectorXd Env::observation_at(int t) const {
  if (spec_.task == Task::delayed_match_to_sample) {
    Eigen::VectorXd obs = Eigen::VectorXd::Zero(3);
    obs[0] = t < window_begin_ ? 1.0 : 0.0;  // fixation cue, off at go time
    int angle = -1;
    if (t >= sample_begin_ && t < sample_end_) angle = info_.sample_angle;
    if (t >= test_begin_ && t < test_end_) angle = info_.test_angle;
    if (angle >= 0) {
      const double theta = angle * M_PI / 180.0;
      obs[1] = (1.0 + std::cos(theta)) / 2.0;
      obs[2] = (1.0 + std::sin(theta)) / 2.0;
    }
    return obs;
  }
  Eigen::VectorXd obs = Eigen::VectorXd::Zero(1);
  if (t == pulse_a_ || t == pulse_b_ || t == pulse_c_ || t == pulse_d_)
    obs[0] = 1.0;
  return obs;
}

std::string Env::phase_at(int t) const {
  if (t >= window_end_) return "end";
  if (t >= window_begin_)
    return spec_.task == Task::interval_reproduction ? "reproduction" : "response";
  const int fix = scaled(spec_.fixation);
  if (t < fix) return "fixation";
  switch (spec_.task) {
    case Task::interval_timing:
      return t < pulse_b_ ? "interval" : "delay";
    case Task::interval_discrimination:
      if (t < pulse_b_) return "interval1";
      if (t < pulse_c_) return "delay";
      return "interval2";
    case Task::delayed_match_to_sample:
      if (t < sample_end_) return "sample";
      if (t < test_begin_) return "delay";
      return "test";
    case Task::interval_reproduction:
      return "interval";
  }
  return "?";
}

void Env::finish(StepResult& r, double reward) {
  r.reward = reward;
  r.done = true;
  in_trial_ = false;
  r.observation = Eigen::VectorXd::Zero(observation_dim());
}

StepResult Env::step(int action) {
  if (!in_trial_)
    throw std::logic_error("env: step() called outside a trial; call reset()");
  if (action < 0 || action >= action_count())
    throw std::invalid_argument("env: action outside the task's action set");

  StepResult r;
  r.reward = 0.0;
  r.done = false;

  const bool in_window = t_ >= window_begin_ && t_ < window_end_;
  if (in_window) {
    if (spec_.task == Task::interval_reproduction) {
      if (action == kRespond) {
        const int elapsed = t_ - pulse_b_;
        info_.chosen_action = action;
        info_.response_elapsed = elapsed;
        const double err = std::abs(elapsed - info_.interval1);
        finish(r, err <= 0.2 * info_.interval1 ? 1.0 : -1.0);
      }
    } else if (action == kLeft || action == kRight) {
      info_.chosen_action = action;
      finish(r, action == info_.correct_action ? 1.0 : -1.0);
    }
  }

  if (!r.done) {
    ++t_;
    if (t_ >= window_end_) {
      finish(r, 0.0);  // no choice made
    } else {
      r.observation = observation_at(t_);
    }
  }
  info_.t = t_;
  info_.phase = r.done ? "end" : phase_at(t_);
  r.info = info_;
  return r;
}

}  // namespace laplace_rl
