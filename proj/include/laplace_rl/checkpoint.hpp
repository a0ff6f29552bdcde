#pragma once

#include <filesystem>
#include <string>

#include "laplace_rl/config.hpp"
#include "laplace_rl/nets.hpp"

namespace laplace_rl {

/// Versioned JSON checkpoint: config echo, core kind, flattened parameter
/// arrays with shapes, rng state and trial counter. Doubles are written with
/// exact round-trip precision, so save -> load -> save is byte identical.
struct Checkpoint {
  int format_version = 1;
  ExperimentConfig config;
  std::string config_hash;
  std::uint64_t seed = 0;
  long trial = 0;
  std::string rng_state;
  AgentParams params;

  std::string to_json() const;
  static Checkpoint from_json(const std::string& text);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace laplace_rl
