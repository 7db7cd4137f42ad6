#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "doorsim/eval.hpp"
#include "doorsim/ppo.hpp"
#include "doorsim/sac.hpp"

namespace doorsim {

/// Mean-action controller for a PPO or SAC checkpoint. Throws SchemaError when
/// the checkpoint does not match the arm's observation/action sizes.
ControllerFactory controller_from_checkpoint(const Checkpoint& ckpt, ArmType arm);

struct AblationConfig {
  std::uint64_t seed = 0;
  int updates = 75;
  PpoConfig ppo;
  ArmType arm = ArmType::FloatingHook;
  KnobType knob = KnobType::Pull;
  OpenDirection direction = OpenDirection::Pull;
  std::size_t train_worlds = 200;
  std::size_t test_worlds = 100;
  SuccessCriterion criterion;
  DynamicsConstants constants;
  int threads = 1;
};

struct AblationCell {
  std::string policy;     // "single" or "randomized"
  std::string condition;  // "env1" or "randomized"
  EvalMetrics metrics;
};

struct AblationReport {
  std::vector<AblationCell> cells;
  std::vector<TrainLogRow> single_log;
  std::vector<TrainLogRow> randomized_log;

  const AblationCell& cell(std::string_view policy, std::string_view condition) const;
};

/// Policy A trains on one fixed world (env1), policy B on a randomized set;
/// both are evaluated on env1 (test_worlds attempts with distinct start poses)
/// and on a held-out randomized test set.
AblationReport run_ablation(const AblationConfig& cfg);
/// policy,condition,r_asr,r_at
std::string ablation_to_csv(const AblationReport& r);

struct SweepCell {
  KnobType knob;
  ArmType arm;
  OpenDirection direction;
  std::string policy;  // "oracle", a checkpoint path, or "untrained"
  std::optional<EvalMetrics> metrics;
  std::size_t worlds = 0;
};

/// Returns a controller for one cell, or nullopt when no policy exists.
using PolicySource =
    std::function<std::optional<std::pair<std::string, ControllerFactory>>(KnobType, ArmType, OpenDirection)>;

struct SweepConfig {
  std::vector<KnobType> knobs{KnobType::Pull, KnobType::Lever, KnobType::Round};
  std::vector<ArmType> arms{ArmType::FloatingHook, ArmType::FloatingGripper};
  std::vector<OpenDirection> directions{OpenDirection::Push, OpenDirection::Pull};
  std::size_t worlds = 100;
  std::uint64_t seed = 0;
  KnobEstimateMode mode;
  SuccessCriterion criterion;
  DynamicsConstants constants;
  int threads = 1;
};

/// World set of one cell; shared across arms so cells differ only in the arm.
std::vector<WorldSpec> sweep_worlds(const SweepConfig& cfg, KnobType knob, OpenDirection direction);
std::vector<SweepCell> run_sweep(const SweepConfig& cfg, const PolicySource& source);
PolicySource oracle_policy_source();
/// Looks for <dir>/<knob>_<arm>_<direction>.json checkpoints.
PolicySource checkpoint_policy_source(const std::filesystem::path& dir);
/// knob,arm,direction,policy,worlds,r_asr,r_at
std::string sweep_to_csv(std::span<const SweepCell> cells);

}  // namespace doorsim
