#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "doorsim/controller.hpp"
#include "doorsim/env.hpp"
#include "doorsim/worldgen.hpp"

namespace doorsim {

struct EvalOptions {
  ArmType arm = ArmType::FloatingHook;
  KnobEstimateMode mode;
  SuccessCriterion criterion;
  std::uint64_t seed = 0;
  int threads = 1;
  /// Attempts per world; each uses a distinct episode seed.
  int repeats = 1;
  DynamicsConstants constants;
};

struct WorldResult {
  std::string world_id;
  int success = 0;
  std::optional<double> t_open;  // present only on success
  double phi_max = 0.0;
};

struct EvalMetrics {
  double r_asr = 0.0;
  std::optional<double> r_at;  // absent when nothing succeeded
};

/// r_ASR = mean indicator; r_AT = mean opening time over successes only.
EvalMetrics aggregate(std::span<const WorldResult> records);

struct EvalReport {
  std::vector<WorldResult> records;
  EvalMetrics metrics;
  /// Free-form provenance: checkpoint, mode, sigma, time limit, seeds, constants.
  std::map<std::string, std::string> metadata;
};

std::string report_to_json(const EvalReport& r);
/// world_id,success,t_open,phi_max
std::string report_to_csv(const EvalReport& r);

/// Episode seed of attempt `repeat` on world `index`.
std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t index, int repeat);

/// One deterministic episode per world (times `repeats`); the episode ends
/// at success or once the time limit has elapsed.
EvalReport evaluate(const ControllerFactory& controller, std::span<const WorldSpec> worlds,
                    const EvalOptions& options);

std::string dynamics_constants_to_json(const DynamicsConstants& c);
DynamicsConstants dynamics_constants_from_json(std::string_view text);

}  // namespace doorsim
