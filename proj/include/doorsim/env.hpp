#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "doorsim/dynamics.hpp"
#include "doorsim/rng.hpp"
#include "doorsim/worldgen.hpp"

namespace doorsim {

/// Shaped training reward weights:
///   r = -a0 d - a1 ln(d + alpha) - a2 o - a3 |u|_2 + a4 phi + a5 psi
struct RewardConfig {
  double a0 = 1.0;
  double a1 = 1.0;
  double a2 = 1.0;
  double a3 = 1.0;
  double a4 = 30.0;
  double a5 = 50.0;
  double alpha = 0.005;
};

struct SuccessCriterion {
  double phi_threshold = 0.2;  // rad, strict
  double time_limit_s = 10.2;
};

struct KnobEstimateMode {
  enum class Kind { GroundTruth, GroundTruthPlusNoise, External };
  Kind kind = Kind::GroundTruth;
  double sigma_m = 0.02;
  /// false: one offset per episode; true: fresh i.i.d. noise every step.
  bool per_step = false;
  Vec3 external{0.0, 0.0, 0.0};

  static KnobEstimateMode ground_truth() { return {}; }
  static KnobEstimateMode noisy(double sigma, bool per_step = false) {
    return {Kind::GroundTruthPlusNoise, sigma, per_step, {}};
  }
};

std::string to_string(const KnobEstimateMode& m);
/// "gt", "gt-noise", "gt-noise-step", "external".
KnobEstimateMode::Kind parse_mode_kind(std::string_view s);

double compute_reward(double d, double o, std::span<const double> u, double phi, double psi,
                      const RewardConfig& cfg, KnobType knob);

/// 1 iff the threshold was crossed (phi_max > threshold) at a time strictly
/// below the limit.
int success_indicator(double phi_max_reached, std::optional<double> t_open,
                      const SuccessCriterion& criterion);

struct EnvConfig {
  ArmType arm = ArmType::FloatingHook;
  KnobEstimateMode mode;
  RewardConfig reward;
  SuccessCriterion success;
  int max_episode_steps = 512;
  bool terminate_on_success = false;
  std::string world_file;  // informational; the env itself takes a WorldSpec
  std::string trace_path;  // empty: no trace
};

std::string env_config_to_json(const EnvConfig& cfg);
EnvConfig env_config_from_json(std::string_view text);

/// Flat observation layout: [q (dof), qdot (dof), dir (3)].
using Observation = std::vector<double>;

struct StepInfo {
  double phi = 0.0;
  double psi = 0.0;
  double d = 0.0;  // tip to grasp point, m
  double o = 0.0;  // orientation error, rad
  bool success = false;
  bool clamped = false;
  bool attached = false;
  std::optional<double> t_open;
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// Single-caller environment over the analytic door dynamics.
class DoorEnv {
 public:
  explicit DoorEnv(EnvConfig cfg = {}, DynamicsConstants constants = {});

  Observation reset(const WorldSpec& world, std::uint64_t episode_seed);
  Observation reset(const WorldSpec& world, std::uint64_t episode_seed,
                    const KnobEstimateMode& mode);
  StepResult step(std::span<const double> action);

  /// Replaces the knob estimate used by External mode.
  void set_external_estimate(const Vec3& estimate);
  void set_mode(const KnobEstimateMode& mode) { cfg_.mode = mode; }

  /// Attaches a JSONL trace sink (one record per step); nullptr detaches.
  void set_trace(std::ostream* out) { trace_ = out; }

  std::size_t action_dim() const { return arm_dof(cfg_.arm); }
  std::size_t obs_dim() const { return 2 * arm_dof(cfg_.arm) + 3; }
  const SimState& state() const { return state_; }
  const WorldSpec& world() const { return world_; }
  const EnvConfig& config() const { return cfg_; }
  const DynamicsConstants& constants() const { return constants_; }
  Vec3 knob_estimate() const;
  int steps() const { return steps_; }
  bool done() const { return done_; }
  std::optional<double> t_open() const { return t_open_; }

 private:
  Observation observe();

  EnvConfig cfg_;
  DynamicsConstants constants_;
  WorldSpec world_;
  SimState state_;
  Rng noise_rng_{0};
  Vec3 offset_{0.0, 0.0, 0.0};
  int steps_ = 0;
  bool done_ = true;
  std::optional<double> t_open_;
  std::ostream* trace_ = nullptr;
};

}  // namespace doorsim
