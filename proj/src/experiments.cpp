#include "doorsim/experiments.hpp"

#include <sstream>

#include "doorsim/errors.hpp"
#include "doorsim/io.hpp"

namespace doorsim {

namespace {

constexpr std::uint64_t kTrainSetKey = 21;
constexpr std::uint64_t kSingleWorldKey = 22;
constexpr std::uint64_t kTestSetKey = 23;
constexpr std::uint64_t kEvalKey = 24;

std::string metric_fields(const std::optional<EvalMetrics>& m) {
  if (!m) return ",";
  return format_double(m->r_asr) + "," + (m->r_at ? format_double(*m->r_at) : std::string("N/A"));
}

}  // namespace

ControllerFactory controller_from_checkpoint(const Checkpoint& ckpt, ArmType arm) {
  const std::size_t dof = arm_dof(arm);
  if (ckpt.obs_dim != 2 * dof + 3 || ckpt.action_dim != dof) {
    throw SchemaError("sizes", "checkpoint sizes (obs " + std::to_string(ckpt.obs_dim) + ", action " +
                                   std::to_string(ckpt.action_dim) + ") do not fit arm " +
                                   std::string(to_string(arm)));
  }
  if (!ckpt.arm.empty() && ckpt.arm != to_string(arm)) {
    throw SchemaError("arm", "checkpoint trained for " + ckpt.arm);
  }
  if (ckpt.algorithm == "ppo") {
    auto policy = std::make_shared<const ActorCritic>(ppo_from_checkpoint(ckpt));
    return [policy] { return std::make_unique<PpoController>(policy); };
  }
  if (ckpt.algorithm == "sac") {
    auto agent = std::make_shared<const SacAgent>(sac_from_checkpoint(ckpt));
    return [agent] { return std::make_unique<SacController>(agent); };
  }
  throw SchemaError("algorithm", "unknown algorithm '" + ckpt.algorithm + "'");
}

const AblationCell& AblationReport::cell(std::string_view policy, std::string_view condition) const {
  for (const auto& c : cells) {
    if (c.policy == policy && c.condition == condition) return c;
  }
  throw ContractViolation("ablation report has no cell " + std::string(policy) + "/" +
                          std::string(condition));
}

AblationReport run_ablation(const AblationConfig& cfg) {
  const auto train = sample_world_set(derive_seed(cfg.seed, kTrainSetKey), cfg.train_worlds, cfg.knob,
                                      cfg.direction);
  const auto env1 = sample_world_set(derive_seed(cfg.seed, kSingleWorldKey), 1, cfg.knob, cfg.direction);
  const auto test = sample_world_set(derive_seed(cfg.seed, kTestSetKey), cfg.test_worlds, cfg.knob,
                                     cfg.direction);

  TrainOptions opts;
  opts.seed = cfg.seed;
  opts.arm = cfg.arm;
  opts.env.success = cfg.criterion;
  opts.constants = cfg.constants;
  opts.write_files = false;
  PpoConfig ppo = cfg.ppo;
  ppo.threads = cfg.threads;

  AblationReport report;
  auto single = train_ppo(ppo, env1, cfg.updates, opts);
  auto randomized = train_ppo(ppo, train, cfg.updates, opts);
  report.single_log = single.log;
  report.randomized_log = randomized.log;

  EvalOptions eo;
  eo.arm = cfg.arm;
  eo.criterion = cfg.criterion;
  eo.seed = derive_seed(cfg.seed, kEvalKey);
  eo.threads = cfg.threads;
  eo.constants = cfg.constants;
  const std::pair<const char*, std::shared_ptr<const ActorCritic>> policies[] = {
      {"single", std::make_shared<const ActorCritic>(single.final_policy)},
      {"randomized", std::make_shared<const ActorCritic>(randomized.final_policy)}};
  for (const auto& [name, policy] : policies) {
    ControllerFactory factory = [policy] { return std::make_unique<PpoController>(policy); };
    EvalOptions on_env1 = eo;
    on_env1.repeats = static_cast<int>(cfg.test_worlds);
    report.cells.push_back({name, "env1", evaluate(factory, env1, on_env1).metrics});
    report.cells.push_back({name, "randomized", evaluate(factory, test, eo).metrics});
  }
  return report;
}

std::string ablation_to_csv(const AblationReport& r) {
  std::ostringstream ss;
  ss << "policy,condition,r_asr,r_at\n";
  for (const auto& c : r.cells) ss << c.policy << ',' << c.condition << ',' << metric_fields(c.metrics) << '\n';
  return ss.str();
}

std::vector<WorldSpec> sweep_worlds(const SweepConfig& cfg, KnobType knob, OpenDirection direction) {
  return sample_world_set(derive_seed(cfg.seed, static_cast<std::uint64_t>(knob),
                                      static_cast<std::uint64_t>(direction)),
                          cfg.worlds, knob, direction);
}

std::vector<SweepCell> run_sweep(const SweepConfig& cfg, const PolicySource& source) {
  std::vector<SweepCell> cells;
  for (KnobType knob : cfg.knobs) {
    for (OpenDirection dir : cfg.directions) {
      const auto worlds = sweep_worlds(cfg, knob, dir);
      for (ArmType arm : cfg.arms) {
        SweepCell cell{knob, arm, dir, "untrained", std::nullopt, worlds.size()};
        if (auto policy = source ? source(knob, arm, dir) : std::nullopt) {
          EvalOptions eo;
          eo.arm = arm;
          eo.mode = cfg.mode;
          eo.criterion = cfg.criterion;
          eo.seed = cfg.seed;
          eo.threads = cfg.threads;
          eo.constants = cfg.constants;
          cell.policy = policy->first;
          cell.metrics = evaluate(policy->second, worlds, eo).metrics;
        }
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

PolicySource oracle_policy_source() {
  return [](KnobType, ArmType, OpenDirection) -> std::optional<std::pair<std::string, ControllerFactory>> {
    return std::pair<std::string, ControllerFactory>{
        "oracle", [] { return std::make_unique<OracleController>(); }};
  };
}

PolicySource checkpoint_policy_source(const std::filesystem::path& dir) {
  return [dir](KnobType knob, ArmType arm,
               OpenDirection direction) -> std::optional<std::pair<std::string, ControllerFactory>> {
    const auto path = dir / (std::string(to_string(knob)) + "_" + std::string(to_string(arm)) + "_" +
                             std::string(to_string(direction)) + ".json");
    if (!std::filesystem::exists(path)) return std::nullopt;
    return std::pair<std::string, ControllerFactory>{path.string(),
                                                     controller_from_checkpoint(load_checkpoint(path), arm)};
  };
}

std::string sweep_to_csv(std::span<const SweepCell> cells) {
  std::ostringstream ss;
  ss << "knob,arm,direction,policy,worlds,r_asr,r_at\n";
  for (const auto& c : cells) {
    ss << to_string(c.knob) << ',' << to_string(c.arm) << ',' << to_string(c.direction) << ','
       << c.policy << ',' << c.worlds << ',' << metric_fields(c.metrics) << '\n';
  }
  return ss.str();
}

}  // namespace doorsim
