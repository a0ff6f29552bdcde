#include "laplace_rl/checkpoint.hpp"

#include <stdexcept>

#include "json.hpp"
#include "laplace_rl/io_util.hpp"

namespace laplace_rl {

using nlohmann::json;

std::string Checkpoint::to_json() const {
  json j;
  j["format_version"] = format_version;
  j["config"] = json::parse(config.to_json());
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["trial"] = trial;
  j["rng_state"] = rng_state;
  j["core"] = core_name(params.cfg.core);
  json tensors = json::object();
  params.for_each(
      [&](const char* name, const Eigen::MatrixXd& m) {
        json t;
        t["shape"] = {m.rows(), m.cols()};
        std::vector<double> data(m.size());
        // row-major flattening
        for (Eigen::Index r = 0; r < m.rows(); ++r)
          for (Eigen::Index c = 0; c < m.cols(); ++c)
            data[r * m.cols() + c] = m(r, c);
        t["data"] = data;
        tensors[name] = t;
      },
      false);
  j["params"] = tensors;
  return j.dump(2) + "\n";
}

Checkpoint Checkpoint::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  Checkpoint ck;
  ck.format_version = j.at("format_version").get<int>();
  if (ck.format_version != 1)
    throw std::runtime_error("checkpoint: unsupported format_version");
  ck.config = ExperimentConfig::from_json(j.at("config").dump());
  ck.config_hash = j.at("config_hash").get<std::string>();
  ck.seed = j.value("seed", std::uint64_t{0});
  ck.trial = j.at("trial").get<long>();
  ck.rng_state = j.value("rng_state", std::string());

  std::mt19937_64 dummy(0);
  ck.params = init_agent_params(ck.config.net, dummy);
  const json& tensors = j.at("params");
  ck.params.for_each(
      [&](const char* name, Eigen::MatrixXd& m) {
        if (!tensors.contains(name))
          throw std::runtime_error(std::string("checkpoint: missing tensor ") + name);
        const json& t = tensors.at(name);
        const auto shape = t.at("shape").get<std::vector<long>>();
        if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
          throw std::runtime_error(std::string("checkpoint: shape mismatch for ") + name);
        const auto data = t.at("data").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(data.size()) != m.size())
          throw std::runtime_error(std::string("checkpoint: data size mismatch for ") + name);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
          for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = data[r * m.cols() + c];
      },
      false);
  if (!ck.params.all_finite())
    throw std::runtime_error("checkpoint: non-finite parameters");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  write_text_file(path, to_json());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  return from_json(read_text_file(path));
}

}  // namespace laplace_rl
