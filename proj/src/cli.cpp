#include "doorsim/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "doorsim/errors.hpp"
#include "doorsim/experiments.hpp"
#include "doorsim/io.hpp"
#include "json.hpp"

namespace doorsim {

namespace {

using nlohmann::json;

// Default strings of vector options look like "[1,2,3]".
std::vector<std::string> split_default(std::string s) {
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  std::vector<std::string> parts;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, ',');) parts.push_back(part);
  return parts;
}

/// CLI11 config formatter reading and writing flat JSON objects whose keys are
/// long flag names.
class JsonConfig : public CLI::Config {
 public:
  // Subcommand the file's keys belong to.
  std::string section;

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string& name = opt->get_lnames().front();
      if (name == "help" || name == "config") continue;
      if (opt->get_expected_min() == 0) {
        j[name] = opt->count() > 0 && opt->as<bool>();
        continue;
      }
      std::vector<std::string> values = opt->results();
      if (values.empty()) {
        if (!default_also || opt->get_default_str().empty()) continue;
        values = split_default(opt->get_default_str());
      }
      auto convert = [](const std::string& s) {
        if (s.empty()) return json(s);
        char* end = nullptr;
        const double d = std::strtod(s.c_str(), &end);
        if (end && *end == '\0') {
          if (s.find_first_of(".eE") == std::string::npos && s.front() != '-') return json(std::stoull(s));
          if (s.find_first_of(".eE") == std::string::npos) return json(std::stoll(s));
          return json(d);
        }
        return json(s);
      };
      if (opt->get_expected_max() > 1) {
        json arr = json::array();
        for (const auto& v : values) arr.push_back(convert(v));
        j[name] = arr;
      } else {
        j[name] = convert(values.back());
      }
    }
    return j.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::parse_error& e) {
      throw SchemaError("<config>", e.what());
    }
    if (!j.is_object()) throw SchemaError("<config>", "expected a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.name = key;
      auto text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(text(v));
      } else if (value.is_object()) {
        throw SchemaError(key, "nested objects are not supported in config files");
      } else {
        item.inputs.push_back(text(value));
      }
      if (!section.empty()) item.parents = {section};
      items.push_back(std::move(item));
    }
    return items;
  }
};

struct Common {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Master seed; every random stream is derived from it")
      ->capture_default_str();
  sub->add_option("--threads", c.threads, "Worker threads (falls back to DOORSIM_THREADS)")
      ->envname("DOORSIM_THREADS")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--out", c.out, "Output directory")->required();
}

struct EnvArgs {
  std::string arm = "hook";
  std::string mode = "gt";
  double sigma = 0.02;
  double time_limit = 10.2;
  double phi_threshold = 0.2;
  std::vector<double> reward_weights{1, 1, 1, 1, 30, 50};
  double reward_alpha = 0.005;
  std::string constants;
};

void add_env(CLI::App* sub, EnvArgs& e) {
  sub->add_option("--arm", e.arm, "End effector: hook | gripper")
      ->check(CLI::IsMember({"hook", "gripper"}))
      ->capture_default_str();
  sub->add_option("--mode", e.mode, "Knob position input: gt | gt-noise | gt-noise-step")
      ->check(CLI::IsMember({"gt", "gt-noise", "gt-noise-step"}))
      ->capture_default_str();
  sub->add_option("--sigma", e.sigma, "Knob estimate noise std-dev [m]")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sub->add_option("--time-limit", e.time_limit, "Success time limit [s]")->capture_default_str();
  sub->add_option("--phi-threshold", e.phi_threshold, "Door angle counted as open [rad]")
      ->capture_default_str();
  sub->add_option("--reward-weights", e.reward_weights, "Reward weights a0..a5")
      ->expected(6)
      ->capture_default_str();
  sub->add_option("--reward-alpha", e.reward_alpha, "Offset inside the log distance term [m]")
      ->capture_default_str();
  sub->add_option("--constants", e.constants, "JSON file overriding dynamics constants");
}

KnobEstimateMode make_mode(const EnvArgs& e) {
  if (e.mode == "gt") return KnobEstimateMode::ground_truth();
  return KnobEstimateMode::noisy(e.sigma, e.mode == "gt-noise-step");
}

SuccessCriterion make_criterion(const EnvArgs& e) {
  SuccessCriterion c;
  c.time_limit_s = e.time_limit;
  c.phi_threshold = e.phi_threshold;
  return c;
}

EnvConfig make_env(const EnvArgs& e) {
  EnvConfig c;
  c.arm = parse_arm_type(e.arm);
  c.mode = make_mode(e);
  c.success = make_criterion(e);
  const auto& w = e.reward_weights;
  c.reward = {w[0], w[1], w[2], w[3], w[4], w[5], e.reward_alpha};
  return c;
}

DynamicsConstants make_constants(const EnvArgs& e) {
  if (e.constants.empty()) return {};
  return dynamics_constants_from_json(read_text_file(e.constants));
}

void write_resolved(const CLI::App* sub, const std::filesystem::path& out) {
  write_text_file(out / "resolved_config.json", sub->config_to_str(true, false));
}

struct PpoArgs {
  PpoConfig cfg;
  int updates = 150;
};

struct SacArgs {
  SacConfig cfg;
  int epochs = 10;
};

void add_ppo(CLI::App* sub, PpoArgs& p) {
  auto* g = "PPO";
  sub->add_option("--updates", p.updates, "PPO updates")->group(g)->capture_default_str();
  sub->add_option("--workers", p.cfg.workers, "Rollout workers per update")->group(g)->capture_default_str();
  sub->add_option("--episodes-per-worker", p.cfg.episodes_per_worker, "Episodes per worker per update")
      ->group(g)->capture_default_str();
  sub->add_option("--episode-steps", p.cfg.episode_steps, "Steps per episode")->group(g)->capture_default_str();
  sub->add_option("--minibatch", p.cfg.minibatch, "Minibatch size")->group(g)->capture_default_str();
  sub->add_option("--ppo-epochs", p.cfg.epochs, "Optimization passes per update")->group(g)->capture_default_str();
  sub->add_option("--clip", p.cfg.clip, "Clipping parameter")->group(g)->capture_default_str();
  sub->add_option("--gamma", p.cfg.gamma, "Discount")->group(g)->capture_default_str();
  sub->add_option("--gae-lambda", p.cfg.gae_lambda, "GAE lambda")->group(g)->capture_default_str();
  sub->add_option("--lr", p.cfg.lr, "Adam learning rate")->group(g)->capture_default_str();
  sub->add_option("--entropy-coef", p.cfg.entropy_coef, "Entropy bonus weight")->group(g)->capture_default_str();
  sub->add_option("--value-coef", p.cfg.value_loss_coef, "Value loss weight")->group(g)->capture_default_str();
  sub->add_option("--max-grad-norm", p.cfg.max_grad_norm, "Global gradient norm clip")
      ->group(g)->capture_default_str();
  sub->add_option("--hidden", p.cfg.hidden, "Hidden layer width")->group(g)->capture_default_str();
  sub->add_option("--init-log-std", p.cfg.init_log_std, "Initial policy log std-dev")
      ->group(g)->capture_default_str();
}

void add_sac(CLI::App* sub, SacArgs& s) {
  auto* g = "SAC";
  sub->add_option("--sac-epochs", s.epochs, "SAC epochs")->group(g)->capture_default_str();
  sub->add_option("--sac-batch", s.cfg.batch, "SAC minibatch size")->group(g)->capture_default_str();
  sub->add_option("--sac-lr-policy", s.cfg.lr_policy, "Policy learning rate")->group(g)->capture_default_str();
  sub->add_option("--sac-lr-q", s.cfg.lr_q, "Q learning rate")->group(g)->capture_default_str();
  sub->add_option("--sac-lr-temperature", s.cfg.lr_temperature, "Temperature learning rate")
      ->group(g)->capture_default_str();
  sub->add_option("--sac-tau", s.cfg.tau, "Target smoothing coefficient")->group(g)->capture_default_str();
  sub->add_option("--sac-init-temperature", s.cfg.init_temperature, "Initial entropy temperature")
      ->group(g)->capture_default_str();
  sub->add_option("--sac-episodes-per-epoch", s.cfg.episodes_per_epoch, "Episodes collected per epoch")
      ->group(g)->capture_default_str();
  sub->add_option("--sac-replay-capacity", s.cfg.replay_capacity, "Replay buffer capacity [transitions]")
      ->group(g)->capture_default_str();
  sub->add_option("--sac-twin-q", s.cfg.twin_q, "Use twin Q heads with min backup")
      ->group(g)->capture_default_str();
}

std::vector<WorldSpec> probe_set(const std::vector<WorldSpec>& worlds, std::uint64_t seed, std::size_t n) {
  if (n == 0) return {};
  return sample_world_set(derive_seed(seed, 0x70726f6265ULL), n, worlds.front().knob_type,
                          worlds.front().open_direction);
}

int fail(std::ostream& err, const char* kind, int code, const std::string& message) {
  err << json{{"error", kind}, {"exit_code", code}, {"message", message}}.dump() << '\n';
  return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Door-opening benchmark: world generation, training and evaluation", "doorsim"};
  // The config file is read by the root app, so its keys are routed to the
  // subcommand named on the command line.
  auto formatter = std::make_shared<JsonConfig>();
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "gen" || a == "train" || a == "eval" || a == "replay") {
      formatter->section = a;
      break;
    }
  }
  app.config_formatter(formatter);
  app.set_config("--config", "", "JSON file of flag values for the subcommand; command-line flags take precedence");
  app.fallthrough();
  app.require_subcommand(1);

  // gen
  Common gen_common;
  std::size_t gen_n = 100;
  std::string gen_knob = "pull", gen_direction = "pull";
  auto* gen = app.add_subcommand("gen", "Sample a randomized world set");
  add_common(gen, gen_common);
  gen->add_option("--n", gen_n, "Number of worlds")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--knob", gen_knob, "Knob type: pull | lever | round")
      ->check(CLI::IsMember({"pull", "lever", "round"}))
      ->capture_default_str();
  gen->add_option("--direction", gen_direction, "Opening direction: push | pull")
      ->check(CLI::IsMember({"push", "pull"}))
      ->capture_default_str();

  // train
  Common train_common;
  EnvArgs train_env;
  PpoArgs ppo;
  SacArgs sac;
  std::string algo = "ppo", train_worlds;
  int curriculum = -1, probe_count = 20, probe_every = 10, checkpoint_every = 10;
  auto* train = app.add_subcommand("train", "Train a PPO or SAC policy on a world set");
  add_common(train, train_common);
  add_env(train, train_env);
  add_ppo(train, ppo);
  add_sac(train, sac);
  train->add_option("--algo", algo, "ppo | sac")->check(CLI::IsMember({"ppo", "sac"}))->capture_default_str();
  train->add_option("--worlds", train_worlds, "World set directory or manifest")->required();
  train->add_option("--curriculum", curriculum,
                    "Ground truth for the first K updates/epochs, then --sigma noise (-1: off)")
      ->capture_default_str();
  train->add_option("--probe-count", probe_count, "Probe worlds evaluated during training (0: off)")
      ->capture_default_str();
  train->add_option("--probe-every", probe_every, "Probe interval [updates/epochs]")->capture_default_str();
  train->add_option("--checkpoint-every", checkpoint_every, "Checkpoint interval [updates/epochs]")
      ->capture_default_str();

  // eval
  Common eval_common;
  EnvArgs eval_env;
  PpoArgs ablation_ppo;
  ablation_ppo.updates = 75;
  std::string eval_worlds, checkpoint, policies;
  bool oracle = false, do_sweep = false, do_ablation = false;
  int repeats = 1;
  std::size_t sweep_n = 100;
  std::string ablation_knob = "pull", ablation_direction = "pull";
  auto* eval = app.add_subcommand("eval", "Evaluate a policy, or run the sweep / ablation protocols");
  add_common(eval, eval_common);
  add_env(eval, eval_env);
  eval->add_option("--worlds", eval_worlds, "Test world set directory or manifest");
  eval->add_option("--checkpoint", checkpoint, "Policy checkpoint to evaluate");
  eval->add_flag("--oracle", oracle, "Evaluate the scripted oracle controller");
  eval->add_option("--repeats", repeats, "Attempts per world")->check(CLI::PositiveNumber)->capture_default_str();
  eval->add_flag("--sweep", do_sweep, "Knob x arm x direction table (oracle, or checkpoints from --policies)");
  eval->add_option("--policies", policies, "Directory of <knob>_<arm>_<direction>.json checkpoints");
  eval->add_option("--sweep-worlds", sweep_n, "Worlds per sweep cell")->capture_default_str();
  eval->add_flag("--ablation", do_ablation, "Single-world vs randomized training ablation");
  eval->add_option("--ablation-updates", ablation_ppo.updates, "PPO updates per ablation policy")
      ->capture_default_str();
  eval->add_option("--ablation-knob", ablation_knob, "Knob type of the ablation worlds")
      ->check(CLI::IsMember({"pull", "lever", "round"}))
      ->capture_default_str();
  eval->add_option("--ablation-direction", ablation_direction, "Opening direction of the ablation worlds")
      ->check(CLI::IsMember({"push", "pull"}))
      ->capture_default_str();

  // replay
  Common replay_common;
  EnvArgs replay_env;
  std::string replay_world, replay_checkpoint;
  bool replay_oracle = false;
  auto* replay = app.add_subcommand("replay", "Re-run one episode and write a JSONL trace");
  add_common(replay, replay_common);
  add_env(replay, replay_env);
  replay->add_option("--world", replay_world, "World file")->required();
  replay->add_option("--checkpoint", replay_checkpoint, "Policy checkpoint");
  replay->add_flag("--oracle", replay_oracle, "Use the scripted oracle controller");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // CLI11 reports a missing --config file as a parse error; keep it an IO failure.
    if (dynamic_cast<const CLI::FileError*>(&e)) return fail(err, "io", kExitIo, e.what());
    if (dynamic_cast<const CLI::ConfigError*>(&e)) return fail(err, "schema", kExitSchema, e.what());
    return fail(err, "usage", kExitUsage, e.what());
  } catch (const Error& e) {
    return fail(err, e.kind(), std::string(e.kind()) == "io" ? kExitIo : kExitSchema, e.what());
  }

  try {
    if (*gen) {
      const std::filesystem::path dir = gen_common.out;
      const auto set = generate_world_set(gen_common.seed, gen_n, parse_knob_type(gen_knob),
                                          parse_open_direction(gen_direction), dir);
      write_resolved(gen, dir);
      out << "wrote " << set.worlds.size() << " worlds to " << set.manifest_path.string() << '\n';
    } else if (*train) {
      const std::filesystem::path dir = train_common.out;
      const auto set = load_world_set(train_worlds);
      TrainOptions opts;
      opts.out_dir = dir;
      opts.seed = train_common.seed;
      opts.env = make_env(train_env);
      opts.arm = opts.env.arm;
      opts.constants = make_constants(train_env);
      opts.noise_sigma = train_env.sigma;
      opts.noise_from_start = train_env.mode != "gt";
      if (curriculum >= 0) {
        opts.curriculum_updates = curriculum;
        opts.noise_from_start = false;
      }
      opts.probe_worlds = probe_set(set.worlds, train_common.seed, static_cast<std::size_t>(probe_count));
      opts.probe_every = probe_every;
      opts.checkpoint_every = checkpoint_every;
      write_resolved(train, dir);
      if (algo == "ppo") {
        ppo.cfg.threads = train_common.threads;
        const auto r = train_ppo(ppo.cfg, set.worlds, ppo.updates, opts);
        out << "trained " << r.log.size() << " updates; last checkpoint "
            << (r.checkpoints.empty() ? "" : r.checkpoints.back().string()) << '\n';
      } else {
        const auto r = train_sac(sac.cfg, set.worlds, sac.epochs, opts);
        out << "trained " << r.log.size() << " epochs; last checkpoint "
            << (r.checkpoints.empty() ? "" : r.checkpoints.back().string()) << '\n';
      }
    } else if (*eval) {
      const std::filesystem::path dir = eval_common.out;
      const ArmType arm = parse_arm_type(eval_env.arm);
      if (do_ablation) {
        AblationConfig cfg;
        cfg.seed = eval_common.seed;
        cfg.updates = ablation_ppo.updates;
        cfg.arm = arm;
        cfg.knob = parse_knob_type(ablation_knob);
        cfg.direction = parse_open_direction(ablation_direction);
        cfg.criterion = make_criterion(eval_env);
        cfg.constants = make_constants(eval_env);
        cfg.threads = eval_common.threads;
        write_resolved(eval, dir);
        const auto report = run_ablation(cfg);
        const auto csv = ablation_to_csv(report);
        write_text_file(dir / "ablation.csv", csv);
        out << csv;
      } else if (do_sweep) {
        SweepConfig cfg;
        cfg.worlds = sweep_n;
        cfg.seed = eval_common.seed;
        cfg.mode = make_mode(eval_env);
        cfg.criterion = make_criterion(eval_env);
        cfg.constants = make_constants(eval_env);
        cfg.threads = eval_common.threads;
        write_resolved(eval, dir);
        const auto cells =
            run_sweep(cfg, policies.empty() ? (oracle ? oracle_policy_source() : PolicySource{})
                                            : checkpoint_policy_source(policies));
        const auto csv = sweep_to_csv(cells);
        write_text_file(dir / "sweep.csv", csv);
        out << csv;
      } else {
        if (eval_worlds.empty()) throw ContractViolation("eval needs --worlds (or --sweep / --ablation)");
        if (oracle == !checkpoint.empty()) throw ContractViolation("eval needs exactly one of --oracle, --checkpoint");
        const auto set = load_world_set(eval_worlds);
        EvalOptions eo;
        eo.arm = arm;
        eo.mode = make_mode(eval_env);
        eo.criterion = make_criterion(eval_env);
        eo.seed = eval_common.seed;
        eo.threads = eval_common.threads;
        eo.repeats = repeats;
        eo.constants = make_constants(eval_env);
        ControllerFactory factory;
        if (oracle) {
          factory = [] { return std::make_unique<OracleController>(); };
        } else {
          factory = controller_from_checkpoint(load_checkpoint(checkpoint), arm);
        }
        write_resolved(eval, dir);
        auto report = evaluate(factory, set.worlds, eo);
        report.metadata["policy"] = oracle ? "oracle" : checkpoint;
        report.metadata["worlds"] = set.manifest_path.string();
        write_text_file(dir / "report.json", report_to_json(report));
        write_text_file(dir / "report.csv", report_to_csv(report));
        out << "r_asr=" << format_double(report.metrics.r_asr) << " r_at="
            << (report.metrics.r_at ? format_double(*report.metrics.r_at) : "N/A") << '\n';
      }
    } else if (*replay) {
      const std::filesystem::path dir = replay_common.out;
      if (replay_oracle == !replay_checkpoint.empty()) {
        throw ContractViolation("replay needs exactly one of --oracle, --checkpoint");
      }
      const WorldSpec world = read_world(replay_world);
      EnvConfig ec = make_env(replay_env);
      ec.terminate_on_success = true;
      ec.max_episode_steps = std::max(512, static_cast<int>(std::ceil(ec.success.time_limit_s / 0.02)));
      ControllerFactory factory;
      if (replay_oracle) {
        factory = [] { return std::make_unique<OracleController>(); };
      } else {
        factory = controller_from_checkpoint(load_checkpoint(replay_checkpoint), ec.arm);
      }
      write_resolved(replay, dir);
      std::filesystem::create_directories(dir);
      std::ofstream trace(dir / "trace.jsonl");
      if (!trace) throw IoError((dir / "trace.jsonl").string(), "cannot open for writing");
      DoorEnv env(ec, make_constants(replay_env));
      env.set_trace(&trace);
      auto policy = factory();
      Observation obs = env.reset(world, replay_common.seed);
      while (!env.done() && env.state().t < ec.success.time_limit_s) {
        obs = env.step(policy->act(env, obs)).obs;
      }
      const int success = success_indicator(env.state().phi_max_reached, env.t_open(), ec.success);
      const json summary = {{"world_id", world.world_id},
                            {"steps", env.steps()},
                            {"success", success},
                            {"t_open", success ? json(*env.t_open()) : json(nullptr)},
                            {"phi_max", env.state().phi_max_reached}};
      write_text_file(dir / "replay_summary.json", summary.dump(2) + "\n");
      out << summary.dump() << '\n';
    }
  } catch (const NumericalBlowup& e) {
    return fail(err, e.kind(), kExitNumerical, e.what());
  } catch (const IoError& e) {
    return fail(err, e.kind(), kExitIo, e.what());
  } catch (const SchemaError& e) {
    return fail(err, e.kind(), kExitSchema, e.what());
  } catch (const VersionError& e) {
    return fail(err, e.kind(), kExitSchema, e.what());
  } catch (const ContractViolation& e) {
    return fail(err, e.kind(), kExitContract, e.what());
  } catch (const std::exception& e) {
    return fail(err, "error", kExitFailure, e.what());
  }
  return kExitOk;
}

}  // namespace doorsim
