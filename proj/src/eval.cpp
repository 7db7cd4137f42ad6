#include "doorsim/eval.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "doorsim/errors.hpp"
#include "doorsim/io.hpp"
#include "doorsim/parallel.hpp"
#include "doorsim/rng.hpp"
#include "json.hpp"

namespace doorsim {

using nlohmann::json;

int threads_from_env(int fallback) {
  if (const char* v = std::getenv("DOORSIM_THREADS")) {
    const int n = std::atoi(v);
    if (n > 0) return n;
  }
  return fallback;
}

EvalMetrics aggregate(std::span<const WorldResult> records) {
  EvalMetrics m;
  if (records.empty()) return m;
  std::size_t successes = 0;
  double t_sum = 0.0;
  for (const auto& r : records) {
    if (r.success) {
      ++successes;
      t_sum += *r.t_open;
    }
  }
  m.r_asr = static_cast<double>(successes) / static_cast<double>(records.size());
  if (successes > 0) m.r_at = t_sum / static_cast<double>(successes);
  return m;
}

std::string report_to_json(const EvalReport& r) {
  json records = json::array();
  for (const auto& w : r.records) {
    records.push_back({{"world_id", w.world_id},
                       {"success", w.success},
                       {"t_open", w.t_open ? json(*w.t_open) : json(nullptr)},
                       {"phi_max", w.phi_max}});
  }
  const json j = {
      {"r_asr", r.metrics.r_asr},
      {"r_at", r.metrics.r_at ? json(*r.metrics.r_at) : json(nullptr)},
      {"n", r.records.size()},
      {"metadata", r.metadata},
      {"records", records},
  };
  return j.dump(2) + "\n";
}

std::string report_to_csv(const EvalReport& r) {
  std::ostringstream ss;
  ss << "world_id,success,t_open,phi_max\n";
  for (const auto& w : r.records) {
    ss << w.world_id << ',' << w.success << ',' << (w.t_open ? format_double(*w.t_open) : "")
       << ',' << format_double(w.phi_max) << '\n';
  }
  return ss.str();
}

std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t index, int repeat) {
  return derive_seed(seed, index, static_cast<std::uint64_t>(repeat));
}

EvalReport evaluate(const ControllerFactory& controller, std::span<const WorldSpec> worlds,
                    const EvalOptions& options) {
  if (worlds.empty()) throw ContractViolation("evaluate: empty world set");
  const int repeats = std::max(1, options.repeats);
  const std::size_t n = worlds.size() * static_cast<std::size_t>(repeats);
  EnvConfig cfg;
  cfg.arm = options.arm;
  cfg.mode = options.mode;
  cfg.success = options.criterion;
  cfg.terminate_on_success = true;
  cfg.max_episode_steps = std::max(
      512, static_cast<int>(std::ceil(options.criterion.time_limit_s / options.constants.control_dt)));

  EvalReport report;
  report.records.resize(n);
  parallel_for(n, options.threads, [&](std::size_t k) {
    const std::size_t i = k / static_cast<std::size_t>(repeats);
    const int rep = static_cast<int>(k % static_cast<std::size_t>(repeats));
    DoorEnv env(cfg, options.constants);
    auto policy = controller();
    Observation obs = env.reset(worlds[i], eval_episode_seed(options.seed, i, rep));
    StepResult step;
    while (!env.done() && env.state().t < options.criterion.time_limit_s) {
      step = env.step(policy->act(env, obs));
      obs = std::move(step.obs);
    }
    WorldResult& rec = report.records[k];
    rec.world_id = worlds[i].world_id;
    rec.phi_max = env.state().phi_max_reached;
    rec.success = success_indicator(rec.phi_max, env.t_open(), options.criterion);
    if (rec.success) rec.t_open = env.t_open();
  });
  report.metrics = aggregate(report.records);
  report.metadata["arm"] = std::string(to_string(options.arm));
  report.metadata["mode"] = to_string(options.mode);
  report.metadata["sigma_m"] = format_double(
      options.mode.kind == KnobEstimateMode::Kind::GroundTruthPlusNoise ? options.mode.sigma_m : 0.0);
  report.metadata["time_limit_s"] = format_double(options.criterion.time_limit_s);
  report.metadata["phi_threshold"] = format_double(options.criterion.phi_threshold);
  report.metadata["seed"] = std::to_string(options.seed);
  report.metadata["repeats"] = std::to_string(repeats);
  report.metadata["dynamics_constants"] = json::parse(dynamics_constants_to_json(options.constants)).dump();
  return report;
}

namespace {

template <typename F>
void for_each_constant(F&& f) {
  f("frame_damp_base", &DynamicsConstants::frame_damp_base);
  f("frame_spring_base", &DynamicsConstants::frame_spring_base);
  f("frame_fric_base", &DynamicsConstants::frame_fric_base);
  f("knob_damp_base", &DynamicsConstants::knob_damp_base);
  f("knob_spring_base", &DynamicsConstants::knob_spring_base);
  f("knob_fric_base", &DynamicsConstants::knob_fric_base);
  f("robot_lin_damp_base", &DynamicsConstants::robot_lin_damp_base);
  f("robot_rot_damp_base", &DynamicsConstants::robot_rot_damp_base);
  f("ee_mass", &DynamicsConstants::ee_mass);
  f("ee_inertia", &DynamicsConstants::ee_inertia);
  f("force_limit", &DynamicsConstants::force_limit);
  f("torque_limit", &DynamicsConstants::torque_limit);
  f("aperture_rate", &DynamicsConstants::aperture_rate);
  f("knob_mech_inertia", &DynamicsConstants::knob_mech_inertia);
  f("attach_radius", &DynamicsConstants::attach_radius);
  f("attach_orientation", &DynamicsConstants::attach_orientation);
  f("grip_close_threshold", &DynamicsConstants::grip_close_threshold);
  f("grip_open_threshold", &DynamicsConstants::grip_open_threshold);
  f("contact_stiffness", &DynamicsConstants::contact_stiffness);
  f("contact_damping", &DynamicsConstants::contact_damping);
  f("twist_stiffness", &DynamicsConstants::twist_stiffness);
  f("twist_damping", &DynamicsConstants::twist_damping);
  f("grip_torque_cap", &DynamicsConstants::grip_torque_cap);
  f("push_contact_depth", &DynamicsConstants::push_contact_depth);
  f("unlatch_fraction", &DynamicsConstants::unlatch_fraction);
  f("ajar_angle", &DynamicsConstants::ajar_angle);
  f("lever_length", &DynamicsConstants::lever_length);
  f("round_radius", &DynamicsConstants::round_radius);
  f("hook_round_transfer", &DynamicsConstants::hook_round_transfer);
  f("hook_lever_transfer", &DynamicsConstants::hook_lever_transfer);
  f("control_dt", &DynamicsConstants::control_dt);
}

}  // namespace

std::string dynamics_constants_to_json(const DynamicsConstants& c) {
  json j = json::object();
  for_each_constant([&](const char* name, double DynamicsConstants::*m) { j[name] = c.*m; });
  j["substeps"] = c.substeps;
  return j.dump(2);
}

DynamicsConstants dynamics_constants_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("<dynamics constants>", e.what());
  }
  if (!j.is_object()) throw SchemaError("<dynamics constants>", "expected an object");
  DynamicsConstants c;
  for (const auto& [key, value] : j.items()) {
    bool known = key == "substeps";
    for_each_constant([&](const char* name, double DynamicsConstants::*m) {
      if (key == name) {
        if (!value.is_number() || !(value.get<double>() > 0.0)) {
          throw SchemaError(key, "must be a positive number");
        }
        c.*m = value.get<double>();
        known = true;
      }
    });
    if (!known) throw SchemaError(key, "unknown dynamics constant");
  }
  if (j.contains("substeps")) {
    if (!j["substeps"].is_number_integer() || j["substeps"].get<int>() < 1) {
      throw SchemaError("substeps", "must be a positive integer");
    }
    c.substeps = j["substeps"].get<int>();
  }
  return c;
}

}  // namespace doorsim
