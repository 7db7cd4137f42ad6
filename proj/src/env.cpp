#include "doorsim/env.hpp"

#include <algorithm>
#include <cmath>

#include "doorsim/errors.hpp"
#include "json.hpp"

namespace doorsim {

using nlohmann::json;

namespace {

constexpr std::uint64_t kNoiseStreamKey = 0x6b6e6f62;  // "knob"

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

std::string to_string(const KnobEstimateMode& m) {
  switch (m.kind) {
    case KnobEstimateMode::Kind::GroundTruth: return "gt";
    case KnobEstimateMode::Kind::GroundTruthPlusNoise: return m.per_step ? "gt-noise-step" : "gt-noise";
    case KnobEstimateMode::Kind::External: return "external";
  }
  return "?";
}

KnobEstimateMode::Kind parse_mode_kind(std::string_view s) {
  if (s == "gt") return KnobEstimateMode::Kind::GroundTruth;
  if (s == "gt-noise" || s == "gt-noise-step") return KnobEstimateMode::Kind::GroundTruthPlusNoise;
  if (s == "external") return KnobEstimateMode::Kind::External;
  throw SchemaError("mode", "unknown knob estimate mode '" + std::string(s) + "'");
}

double compute_reward(double d, double o, std::span<const double> u, double phi, double psi,
                      const RewardConfig& cfg, KnobType knob) {
  double u_sq = 0.0;
  for (double x : u) u_sq += x * x;
  double r = -cfg.a0 * d - cfg.a1 * std::log(d + cfg.alpha) - cfg.a2 * o -
             cfg.a3 * std::sqrt(u_sq) + cfg.a4 * phi;
  if (knob != KnobType::Pull) r += cfg.a5 * psi;
  return r;
}

int success_indicator(double phi_max_reached, std::optional<double> t_open,
                      const SuccessCriterion& criterion) {
  if (!(phi_max_reached > criterion.phi_threshold) || !t_open) return 0;
  return *t_open < criterion.time_limit_s ? 1 : 0;
}

std::string env_config_to_json(const EnvConfig& cfg) {
  const json j = {
      {"world_file", cfg.world_file},
      {"arm", std::string(to_string(cfg.arm))},
      {"mode",
       {{"kind", to_string(cfg.mode)},
        {"sigma_m", cfg.mode.sigma_m},
        {"per_step", cfg.mode.per_step}}},
      {"reward",
       {{"a0", cfg.reward.a0},
        {"a1", cfg.reward.a1},
        {"a2", cfg.reward.a2},
        {"a3", cfg.reward.a3},
        {"a4", cfg.reward.a4},
        {"a5", cfg.reward.a5},
        {"alpha", cfg.reward.alpha}}},
      {"success",
       {{"phi_threshold", cfg.success.phi_threshold}, {"time_limit_s", cfg.success.time_limit_s}}},
      {"max_episode_steps", cfg.max_episode_steps},
      {"terminate_on_success", cfg.terminate_on_success},
      {"trace_path", cfg.trace_path},
  };
  return j.dump(2);
}

EnvConfig env_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("<env config>", e.what());
  }
  EnvConfig cfg;
  try {
    cfg.world_file = j.value("world_file", cfg.world_file);
    if (j.contains("arm")) cfg.arm = parse_arm_type(j.at("arm").get<std::string>());
    if (j.contains("mode")) {
      const auto& m = j.at("mode");
      const auto kind = m.value("kind", std::string("gt"));
      cfg.mode.kind = parse_mode_kind(kind);
      cfg.mode.per_step = m.value("per_step", kind == "gt-noise-step");
      cfg.mode.sigma_m = m.value("sigma_m", cfg.mode.sigma_m);
      if (cfg.mode.sigma_m < 0.0) throw SchemaError("mode.sigma_m", "must be nonnegative");
    }
    if (j.contains("reward")) {
      const auto& r = j.at("reward");
      cfg.reward.a0 = r.value("a0", cfg.reward.a0);
      cfg.reward.a1 = r.value("a1", cfg.reward.a1);
      cfg.reward.a2 = r.value("a2", cfg.reward.a2);
      cfg.reward.a3 = r.value("a3", cfg.reward.a3);
      cfg.reward.a4 = r.value("a4", cfg.reward.a4);
      cfg.reward.a5 = r.value("a5", cfg.reward.a5);
      cfg.reward.alpha = r.value("alpha", cfg.reward.alpha);
      if (!(cfg.reward.alpha > 0.0)) throw SchemaError("reward.alpha", "must be positive");
    }
    if (j.contains("success")) {
      const auto& s = j.at("success");
      cfg.success.phi_threshold = s.value("phi_threshold", cfg.success.phi_threshold);
      cfg.success.time_limit_s = s.value("time_limit_s", cfg.success.time_limit_s);
      if (!(cfg.success.phi_threshold > 0.0) || !(cfg.success.time_limit_s > 0.0)) {
        throw SchemaError("success", "threshold and time limit must be positive");
      }
    }
    cfg.max_episode_steps = j.value("max_episode_steps", cfg.max_episode_steps);
    cfg.terminate_on_success = j.value("terminate_on_success", cfg.terminate_on_success);
    cfg.trace_path = j.value("trace_path", cfg.trace_path);
  } catch (const json::exception& e) {
    throw SchemaError("<env config>", e.what());
  }
  return cfg;
}

DoorEnv::DoorEnv(EnvConfig cfg, DynamicsConstants constants)
    : cfg_(std::move(cfg)), constants_(constants) {}

Observation DoorEnv::reset(const WorldSpec& world, std::uint64_t episode_seed) {
  return reset(world, episode_seed, cfg_.mode);
}

Observation DoorEnv::reset(const WorldSpec& world, std::uint64_t episode_seed,
                           const KnobEstimateMode& mode) {
  if (mode.sigma_m < 0.0) throw ContractViolation("knob estimate sigma must be nonnegative");
  cfg_.mode = mode;
  world_ = world;
  state_ = init_state(world_, episode_seed, cfg_.arm);
  noise_rng_ = Rng(derive_seed(world_.rng_seed, episode_seed, kNoiseStreamKey));
  offset_ = {0.0, 0.0, 0.0};
  if (mode.kind == KnobEstimateMode::Kind::GroundTruthPlusNoise && !mode.per_step) {
    for (auto& o : offset_) o = mode.sigma_m * noise_rng_.normal();
  }
  steps_ = 0;
  done_ = false;
  t_open_.reset();
  return observe();
}

void DoorEnv::set_external_estimate(const Vec3& estimate) { cfg_.mode.external = estimate; }

Vec3 DoorEnv::knob_estimate() const {
  if (cfg_.mode.kind == KnobEstimateMode::Kind::External) return cfg_.mode.external;
  const Vec3 truth = knob_grasp_point(world_, state_, constants_);
  return {truth[0] + offset_[0], truth[1] + offset_[1], truth[2] + offset_[2]};
}

Observation DoorEnv::observe() {
  if (cfg_.mode.kind == KnobEstimateMode::Kind::GroundTruthPlusNoise && cfg_.mode.per_step) {
    for (auto& o : offset_) o = cfg_.mode.sigma_m * noise_rng_.normal();
  }
  const std::size_t dof = arm_dof(cfg_.arm);
  Observation obs(obs_dim());
  for (std::size_t i = 0; i < dof; ++i) {
    obs[i] = state_.q[i];
    obs[dof + i] = state_.qdot[i];
  }
  const Vec3 est = knob_estimate();
  for (std::size_t i = 0; i < 3; ++i) obs[2 * dof + i] = est[i] - state_.q[i];
  return obs;
}

StepResult DoorEnv::step(std::span<const double> action) {
  if (done_) throw ContractViolation("step() called on a finished episode; call reset()");
  if (action.size() != action_dim()) {
    throw ContractViolation("action has " + std::to_string(action.size()) +
                            " components, arm expects " + std::to_string(action_dim()));
  }
  std::vector<double> u(action.begin(), action.end());
  bool clamped = false;
  for (auto& x : u) {
    if (!std::isfinite(x)) throw NumericalBlowup("action", "world " + world_.world_id);
    const double c = std::clamp(x, -1.0, 1.0);
    clamped = clamped || c != x;
    x = c;
  }
  state_ = step_physics(world_, state_, u, constants_);
  ++steps_;

  StepResult out;
  out.info.phi = state_.phi;
  out.info.psi = state_.psi;
  out.info.d = distance(knob_grasp_point(world_, state_, constants_),
                        {state_.q[0], state_.q[1], state_.q[2]});
  out.info.o = orientation_error(world_, state_);
  out.info.clamped = clamped;
  out.info.attached = state_.attached;
  if (!t_open_ && state_.phi > cfg_.success.phi_threshold) t_open_ = state_.t;
  out.info.t_open = t_open_;
  out.info.success = success_indicator(state_.phi_max_reached, t_open_, cfg_.success) == 1;
  out.reward = compute_reward(out.info.d, out.info.o, u, state_.phi, state_.psi, cfg_.reward,
                              world_.knob_type);
  done_ = steps_ >= cfg_.max_episode_steps || (cfg_.terminate_on_success && out.info.success);
  out.done = done_;
  out.obs = observe();

  if (trace_) {
    const json rec = {{"t", state_.t},           {"q", state_.q},
                      {"qdot", state_.qdot},     {"u", u},
                      {"phi", state_.phi},       {"psi", state_.psi},
                      {"latched", state_.latched}, {"attached", state_.attached},
                      {"reward", out.reward}};
    *trace_ << rec.dump() << '\n';
  }
  return out;
}

}  // namespace doorsim
