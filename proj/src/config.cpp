#include "laplace_rl/config.hpp"

#include <cstdlib>

#include "json.hpp"
#include "laplace_rl/io_util.hpp"

namespace laplace_rl {

using nlohmann::json;

namespace {

template <class T>
T require(const json& j, const std::string& section, const char* key) {
  if (!j.contains(key))
    throw ConfigError("config: missing required field " + section + "." + key);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field " + section + "." + key + " has the wrong type");
  }
}

template <class T>
T optional(const json& j, const std::string& section, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field " + section + "." + key + " has the wrong type");
  }
}

json env_to_json(const EnvSpec& e) {
  json j;
  j["task"] = task_name(e.task);
  j["scale"] = e.scale;
  j["seed"] = e.seed;
  j["timing_durations"] = e.timing_durations;
  j["discrimination_durations"] = e.discrimination_durations;
  j["reproduction_intervals"] = e.reproduction_intervals;
  j["fixation"] = e.fixation;
  j["timing_delay"] = e.timing_delay;
  j["discrimination_delay"] = e.discrimination_delay;
  j["dms_sample"] = e.dms_sample;
  j["dms_delay"] = e.dms_delay;
  j["dms_test"] = e.dms_test;
  j["response_window"] = e.response_window;
  j["reproduction_window_factor"] = e.reproduction_window_factor;
  return j;
}

EnvSpec env_from_json(const json& j) {
  EnvSpec e;
  e.task = task_from_name(require<std::string>(j, "env", "task"));
  e.scale = require<double>(j, "env", "scale");
  if (e.scale <= 0.0) throw ConfigError("config: env.scale must be > 0");
  e.seed = optional<std::uint64_t>(j, "env", "seed", 0);
  e.timing_durations = optional(j, "env", "timing_durations", e.timing_durations);
  e.discrimination_durations =
      optional(j, "env", "discrimination_durations", e.discrimination_durations);
  e.reproduction_intervals =
      optional(j, "env", "reproduction_intervals", e.reproduction_intervals);
  e.fixation = optional(j, "env", "fixation", e.fixation);
  e.timing_delay = optional(j, "env", "timing_delay", e.timing_delay);
  e.discrimination_delay =
      optional(j, "env", "discrimination_delay", e.discrimination_delay);
  e.dms_sample = optional(j, "env", "dms_sample", e.dms_sample);
  e.dms_delay = optional(j, "env", "dms_delay", e.dms_delay);
  e.dms_test = optional(j, "env", "dms_test", e.dms_test);
  e.response_window = optional(j, "env", "response_window", e.response_window);
  e.reproduction_window_factor = optional(j, "env", "reproduction_window_factor",
                                          e.reproduction_window_factor);
  return e;
}

json memory_to_json(const MemoryConfig& m) {
  json j;
  j["taustar_min"] = m.taustar_min;
  j["taustar_max"] = m.taustar_max;
  j["n_taus"] = m.n_taus;
  j["k"] = m.k;
  j["dt"] = m.dt;
  return j;
}

MemoryConfig memory_from_json(const json& j) {
  MemoryConfig m;
  m.taustar_min = require<double>(j, "memory", "taustar_min");
  m.taustar_max = require<double>(j, "memory", "taustar_max");
  m.n_taus = require<int>(j, "memory", "n_taus");
  m.k = require<int>(j, "memory", "k");
  m.dt = optional(j, "memory", "dt", 1.0);
  if (m.taustar_min <= 0.0) throw ConfigError("config: memory.taustar_min must be > 0");
  if (m.taustar_max <= m.taustar_min)
    throw ConfigError("config: memory.taustar_max must exceed memory.taustar_min");
  if (m.n_taus < 2) throw ConfigError("config: memory.n_taus must be >= 2");
  if (m.k < 2 || m.k % 2 != 0)
    throw ConfigError("config: memory.k must be a positive even integer");
  return m;
}

json core_to_json(const NetConfig& n) {
  json j;
  j["kind"] = core_name(n.core);
  j["frozen"] = n.frozen_core;
  j["use_conv"] = n.use_conv;
  j["hidden_size"] = n.hidden_size;
  j["rnn_hidden"] = n.rnn_hidden;
  j["conv_channels"] = n.conv_channels;
  j["conv_len"] = n.conv_len;
  return j;
}

json train_to_json(const TrainConfig& t) {
  json j;
  j["algorithm"] = algo_name(t.algo);
  j["gamma"] = t.gamma;
  j["lambda"] = t.gae_lambda;
  j["lr"] = t.lr;
  j["entropy_coef"] = t.entropy_coef;
  j["value_coef"] = t.value_coef;
  j["adam"] = {{"beta1", t.adam_beta1}, {"beta2", t.adam_beta2}, {"eps", t.adam_eps}};
  j["clip_norm"] = t.clip_norm;
  j["update_mode"] = t.update_mode == UpdateMode::per_trial ? "per_trial" : "horizon";
  j["horizon"] = t.horizon;
  j["n_trials"] = t.n_trials;
  j["checkpoint_every"] = t.checkpoint_every;
  j["criterion_window"] = t.criterion_window;
  j["criterion_reward"] = t.criterion_reward;
  j["stop_on_criterion"] = t.stop_on_criterion;
  return j;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.algo = algo_from_name(optional<std::string>(j, "train", "algorithm", "a2c"));
  t.gamma = optional(j, "train", "gamma", t.gamma);
  t.gae_lambda = optional(j, "train", "lambda", t.gae_lambda);
  t.lr = optional(j, "train", "lr", t.lr);
  t.entropy_coef = optional(j, "train", "entropy_coef", t.entropy_coef);
  t.value_coef = optional(j, "train", "value_coef", t.value_coef);
  if (j.contains("adam")) {
    const json& a = j.at("adam");
    t.adam_beta1 = optional(a, "train.adam", "beta1", t.adam_beta1);
    t.adam_beta2 = optional(a, "train.adam", "beta2", t.adam_beta2);
    t.adam_eps = optional(a, "train.adam", "eps", t.adam_eps);
  }
  t.clip_norm = optional(j, "train", "clip_norm", t.clip_norm);
  const std::string mode =
      optional<std::string>(j, "train", "update_mode", "per_trial");
  if (mode == "per_trial")
    t.update_mode = UpdateMode::per_trial;
  else if (mode == "horizon")
    t.update_mode = UpdateMode::horizon;
  else
    throw ConfigError("config: train.update_mode must be per_trial or horizon");
  t.horizon = optional(j, "train", "horizon", t.horizon);
  t.n_trials = require<long>(j, "train", "n_trials");
  t.checkpoint_every = optional(j, "train", "checkpoint_every", t.checkpoint_every);
  t.criterion_window = optional(j, "train", "criterion_window", t.criterion_window);
  t.criterion_reward = optional(j, "train", "criterion_reward", t.criterion_reward);
  t.stop_on_criterion = optional(j, "train", "stop_on_criterion", t.stop_on_criterion);
  if (t.gamma <= 0.0 || t.gamma > 1.0)
    throw ConfigError("config: train.gamma must be in (0, 1]");
  if (t.gae_lambda < 0.0 || t.gae_lambda > 1.0)
    throw ConfigError("config: train.lambda must be in [0, 1]");
  if (t.lr <= 0.0) throw ConfigError("config: train.lr must be > 0");
  if (t.n_trials < 0) throw ConfigError("config: train.n_trials must be >= 0");
  if (t.update_mode == UpdateMode::horizon && t.horizon < 1)
    throw ConfigError("config: train.horizon must be >= 1 in horizon mode");
  return t;
}

json to_json_doc(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["env"] = env_to_json(c.env);
  j["core"] = core_to_json(c.net);
  if (c.net.core == CoreKind::cogrnn_tilde || c.net.core == CoreKind::cogrnn_F)
    j["memory"] = memory_to_json(c.net.memory);
  j["train"] = train_to_json(c.train);
  j["seeds"] = c.seeds;
  j["record_activity"] = c.record_activity;
  j["activity_trials"] = c.activity_trials;
  j["out_dir"] = c.out_dir;
  return j;
}

}  // namespace

std::string ExperimentConfig::to_json() const {
  return to_json_doc(*this).dump(2) + "\n";
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_json()); }

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  c.name = optional<std::string>(j, "", "name", c.name);
  if (!j.contains("env")) throw ConfigError("config: missing required section env");
  c.env = env_from_json(j.at("env"));

  if (!j.contains("core")) throw ConfigError("config: missing required section core");
  const json& core = j.at("core");
  c.net.core = core_from_name(require<std::string>(core, "core", "kind"));
  c.net.frozen_core = optional(core, "core", "frozen", false);
  c.net.use_conv = optional(core, "core", "use_conv", false);
  c.net.hidden_size = optional(core, "core", "hidden_size", c.net.hidden_size);
  c.net.rnn_hidden = optional(core, "core", "rnn_hidden", c.net.rnn_hidden);
  c.net.conv_channels = optional(core, "core", "conv_channels", c.net.conv_channels);
  c.net.conv_len = optional(core, "core", "conv_len", c.net.conv_len);
  if (c.net.hidden_size < 1) throw ConfigError("config: core.hidden_size must be >= 1");
  if (c.net.use_conv && c.net.core != CoreKind::cogrnn_tilde)
    throw ConfigError("config: core.use_conv requires core.kind cogrnn_tilde");

  if (c.net.core == CoreKind::cogrnn_tilde || c.net.core == CoreKind::cogrnn_F) {
    if (!j.contains("memory"))
      throw ConfigError("config: missing required section memory (cogrnn cores)");
    c.net.memory = memory_from_json(j.at("memory"));
  }
  if (c.net.use_conv && c.net.conv_len >= c.net.memory.n_taus)
    throw ConfigError("config: core.conv_len must be < memory.n_taus");

  if (!j.contains("train")) throw ConfigError("config: missing required section train");
  c.train = train_from_json(j.at("train"));

  c.seeds = optional(j, "", "seeds", c.seeds);
  if (c.seeds.empty()) throw ConfigError("config: seeds must not be empty");
  c.record_activity = optional(j, "", "record_activity", false);
  c.activity_trials = optional(j, "", "activity_trials", c.activity_trials);
  c.out_dir = optional<std::string>(j, "", "out_dir", c.out_dir);

  // environment-determined dimensions
  Env probe(c.env);
  c.net.obs_dim = probe.observation_dim();
  c.net.n_actions = probe.action_count();
  c.net.memory.input_dim = c.net.obs_dim;
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides) {
  std::string text = read_text_file(path);
  for (const std::string& ov : overrides) apply_override(text, ov);
  return from_json(text);
}

std::filesystem::path ExperimentConfig::run_dir(std::uint64_t seed) const {
  const char* env_root = std::getenv("LAPLACE_RL_OUT");
  std::filesystem::path root = env_root && *env_root ? env_root : out_dir;
  return root / (name + "-" + hash().substr(0, 8)) / ("seed" + std::to_string(seed));
}

void apply_override(std::string& json_text, const std::string& override_expr) {
  const auto eq = override_expr.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like path.to.key=value: " + override_expr);
  std::string path = override_expr.substr(0, eq);
  const std::string value = override_expr.substr(eq + 1);
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  std::string ptr = "/" + path;
  for (char& ch : ptr)
    if (ch == '.') ch = '/';
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // plain string
  }
  doc[json::json_pointer(ptr)] = parsed;
  json_text = doc.dump(2);
}

}  // namespace laplace_rl
