#include "doorsim/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doorsim/errors.hpp"
#include "doorsim/eval.hpp"
#include "doorsim/io.hpp"
#include "doorsim/parallel.hpp"

namespace doorsim {

namespace {

constexpr std::uint64_t kInitKey = 1;
constexpr std::uint64_t kShuffleKey = 2;
constexpr std::uint64_t kActionNoiseKey = 3;
constexpr std::uint64_t kWorldPickKey = 4;
constexpr std::uint64_t kProbeKey = 5;

}  // namespace

ActorCritic ActorCritic::create(std::size_t obs_dim, std::size_t action_dim, std::size_t hidden,
                                Rng& rng, double init_log_std) {
  ActorCritic ac;
  ac.obs_dim = obs_dim;
  ac.action_dim = action_dim;
  ac.actor = MlpShape::two_hidden(obs_dim, action_dim, hidden);
  ac.critic = MlpShape::two_hidden(obs_dim, 1, hidden);
  const auto actor_w = mlp_init(ac.actor, rng, 0.01);
  const auto critic_w = mlp_init(ac.critic, rng, 1.0);
  ac.theta.reserve(actor_w.size() + action_dim + critic_w.size());
  ac.theta.insert(ac.theta.end(), actor_w.begin(), actor_w.end());
  ac.theta.insert(ac.theta.end(), action_dim, init_log_std);
  ac.theta.insert(ac.theta.end(), critic_w.begin(), critic_w.end());
  return ac;
}

std::vector<double> ActorCritic::mean_action(std::span<const double> obs) const {
  return mlp_forward(actor, actor_params(), obs, 1);
}

double ActorCritic::value(std::span<const double> obs) const {
  return mlp_forward(critic, critic_params(), obs, 1)[0];
}

Checkpoint ppo_checkpoint(const ActorCritic& ac, ArmType arm, std::int64_t step) {
  Checkpoint c;
  c.algorithm = "ppo";
  c.step = step;
  c.arm = std::string(to_string(arm));
  c.obs_dim = ac.obs_dim;
  c.action_dim = ac.action_dim;
  c.hidden = ac.actor.sizes[1];
  append_mlp_arrays(c.arrays, "actor", ac.actor, ac.actor_params());
  c.arrays.push_back({"log_std", {ac.action_dim},
                      std::vector<double>(ac.log_std().begin(), ac.log_std().end())});
  append_mlp_arrays(c.arrays, "critic", ac.critic, ac.critic_params());
  return c;
}

ActorCritic ppo_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.algorithm != "ppo") {
    throw SchemaError("algorithm", "expected a ppo checkpoint, got '" + ckpt.algorithm + "'");
  }
  if (ckpt.arch != "mlp_tanh") throw SchemaError("arch", "unsupported architecture '" + ckpt.arch + "'");
  Rng unused(0);
  ActorCritic ac = ActorCritic::create(ckpt.obs_dim, ckpt.action_dim, ckpt.hidden, unused);
  read_mlp_arrays(ckpt, "actor", ac.actor, {ac.theta.data(), ac.actor.param_count()});
  const auto& ls = ckpt.array("log_std");
  if (ls.values.size() != ac.action_dim) throw SchemaError("log_std", "wrong length");
  std::copy(ls.values.begin(), ls.values.end(), ac.theta.begin() + static_cast<std::ptrdiff_t>(ac.log_std_offset()));
  read_mlp_arrays(ckpt, "critic", ac.critic,
                  {ac.theta.data() + ac.critic_offset(), ac.critic.param_count()});
  return ac;
}

std::vector<double> PpoController::act(const DoorEnv&, const Observation& obs) {
  return policy_->mean_action(obs);
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> dones, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n + 1 || dones.size() != n) {
    throw ContractViolation("compute_gae: values must have len(rewards) + 1 entries");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.value_targets.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double mask = 1.0 - dones[t];
    const double delta = rewards[t] + gamma * values[t + 1] * mask - values[t];
    next_adv = delta + gamma * lambda * mask * next_adv;
    out.advantages[t] = next_adv;
    out.value_targets[t] = next_adv + values[t];
  }
  return out;
}

RolloutBuffer collect_rollouts(const ActorCritic& snapshot, std::span<const WorldSpec> worlds,
                               const RolloutRequest& request, const PpoConfig& cfg,
                               const EnvConfig& env_cfg, const DynamicsConstants& constants) {
  if (worlds.empty()) throw ContractViolation("collect_rollouts: empty world set");
  const std::size_t workers = static_cast<std::size_t>(cfg.workers);
  const std::size_t episodes = static_cast<std::size_t>(cfg.episodes_per_worker);
  const std::size_t steps = static_cast<std::size_t>(cfg.episode_steps);
  const std::size_t per_worker = episodes * steps;
  const std::size_t obs_dim = snapshot.obs_dim;
  const std::size_t act_dim = snapshot.action_dim;

  RolloutBuffer buf;
  buf.obs_dim = obs_dim;
  buf.action_dim = act_dim;
  const std::size_t total = workers * per_worker;
  buf.obs.resize(total * obs_dim);
  buf.actions.resize(total * act_dim);
  buf.log_prob_old.resize(total);
  buf.rewards.resize(total);
  buf.values.resize(total);
  buf.dones.resize(total);
  buf.bootstrap_values.resize(workers * episodes);
  buf.episode_starts.resize(workers * episodes);
  buf.episode_returns.resize(workers * episodes);
  buf.episode_worlds.resize(workers * episodes);

  EnvConfig ec = env_cfg;
  ec.mode = request.mode;
  ec.max_episode_steps = cfg.episode_steps;
  ec.terminate_on_success = false;
  const auto run_seed = request.run_seed;
  const auto update = static_cast<std::uint64_t>(request.update);

  parallel_for(workers, cfg.threads, [&](std::size_t w) {
    Rng pick(derive_seed(run_seed, kWorldPickKey, update, w));
    const WorldSpec& world = worlds[pick.below(worlds.size())];
    Rng noise(derive_seed(run_seed, kActionNoiseKey, update, w));
    DoorEnv env(ec, constants);
    MlpCache actor_cache, critic_cache;
    const auto log_std = snapshot.log_std();
    std::vector<double> action(act_dim);
    for (std::size_t e = 0; e < episodes; ++e) {
      const std::size_t ep = w * episodes + e;
      const std::size_t base = w * per_worker + e * steps;
      buf.episode_starts[ep] = base;
      buf.episode_worlds[ep] = world.world_id;
      Observation obs = env.reset(world, derive_seed(run_seed, update, w, e));
      double ret = 0.0;
      for (std::size_t t = 0; t < steps; ++t) {
        const std::size_t k = base + t;
        std::copy(obs.begin(), obs.end(), buf.obs.begin() + static_cast<std::ptrdiff_t>(k * obs_dim));
        mlp_forward(snapshot.actor, snapshot.actor_params(), obs, 1, actor_cache);
        mlp_forward(snapshot.critic, snapshot.critic_params(), obs, 1, critic_cache);
        const auto mean = actor_cache.output();
        for (std::size_t i = 0; i < act_dim; ++i) {
          const double ls = std::clamp(log_std[i], kLogStdMin, kLogStdMax);
          action[i] = mean[i] + std::exp(ls) * noise.normal();
        }
        buf.log_prob_old[k] = gaussian_log_prob(mean, log_std, action);
        buf.values[k] = critic_cache.output()[0];
        std::copy(action.begin(), action.end(), buf.actions.begin() + static_cast<std::ptrdiff_t>(k * act_dim));
        StepResult r;
        try {
          r = env.step(action);
        } catch (const NumericalBlowup& err) {
          throw NumericalBlowup(err.quantity(), "rollout aborted in world " + world.world_id);
        }
        buf.rewards[k] = r.reward;
        buf.dones[k] = r.done ? 1.0 : 0.0;
        ret += r.reward;
        obs = std::move(r.obs);
        if (r.done && t + 1 != steps) {
          throw ContractViolation("collect_rollouts: episode ended before episode_steps");
        }
      }
      mlp_forward(snapshot.critic, snapshot.critic_params(), obs, 1, critic_cache);
      buf.bootstrap_values[ep] = critic_cache.output()[0];
      buf.episode_returns[ep] = ret;
    }
  });
  return buf;
}

void finalize_advantages(RolloutBuffer& buf, const PpoConfig& cfg) {
  buf.advantages.assign(buf.size(), 0.0);
  buf.value_targets.assign(buf.size(), 0.0);
  for (std::size_t ep = 0; ep < buf.episode_starts.size(); ++ep) {
    const std::size_t start = buf.episode_starts[ep];
    const std::size_t end = ep + 1 < buf.episode_starts.size() ? buf.episode_starts[ep + 1] : buf.size();
    std::vector<double> values(buf.values.begin() + static_cast<std::ptrdiff_t>(start),
                               buf.values.begin() + static_cast<std::ptrdiff_t>(end));
    values.push_back(buf.bootstrap_values[ep]);
    const auto gae = compute_gae(
        std::span<const double>(buf.rewards).subspan(start, end - start), values,
        std::span<const double>(buf.dones).subspan(start, end - start), cfg.gamma, cfg.gae_lambda);
    std::copy(gae.advantages.begin(), gae.advantages.end(), buf.advantages.begin() + static_cast<std::ptrdiff_t>(start));
    std::copy(gae.value_targets.begin(), gae.value_targets.end(),
              buf.value_targets.begin() + static_cast<std::ptrdiff_t>(start));
  }
}

double clipped_objective(double ratio, double advantage, double clip) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage;
  return std::min(unclipped, clipped);
}

MinibatchLoss ppo_minibatch_loss(const ActorCritic& ac, const RolloutBuffer& buf,
                                 std::span<const std::size_t> indices,
                                 std::span<const double> adv, const PpoConfig& cfg,
                                 std::span<double> grad) {
  const std::size_t b = indices.size();
  const std::size_t od = ac.obs_dim, ad = ac.action_dim;
  if (grad.size() != ac.theta.size()) throw ContractViolation("ppo_minibatch_loss: bad grad size");
  std::fill(grad.begin(), grad.end(), 0.0);

  std::vector<double> x(b * od);
  for (std::size_t r = 0; r < b; ++r) {
    std::copy_n(buf.obs.begin() + static_cast<std::ptrdiff_t>(indices[r] * od), od,
                x.begin() + static_cast<std::ptrdiff_t>(r * od));
  }
  MlpCache actor_cache, critic_cache;
  mlp_forward(ac.actor, ac.actor_params(), x, b, actor_cache);
  mlp_forward(ac.critic, ac.critic_params(), x, b, critic_cache);
  const auto means = actor_cache.output();
  const auto values = critic_cache.output();
  const auto log_std = ac.log_std();

  std::vector<double> d_mean(b * ad, 0.0), d_value(b, 0.0);
  std::vector<double> g_mean(ad), g_ls(ad);
  double* d_log_std = grad.data() + ac.log_std_offset();
  const double inv_b = 1.0 / static_cast<double>(b);

  MinibatchLoss out;
  for (std::size_t r = 0; r < b; ++r) {
    const std::size_t k = indices[r];
    const std::span<const double> mean = means.subspan(r * ad, ad);
    const std::span<const double> action(buf.actions.data() + k * ad, ad);
    const double lp = gaussian_log_prob(mean, log_std, action, g_mean, g_ls);
    const double ratio = std::exp(lp - buf.log_prob_old[k]);
    const double a = adv[k];
    const double unclipped = ratio * a;
    const double clipped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a;
    const double obj = std::min(unclipped, clipped);
    out.policy_loss -= obj * inv_b;
    out.mean_ratio += ratio * inv_b;
    if (std::abs(ratio - 1.0) > cfg.clip) out.clip_fraction += inv_b;
    // d obj / d log_prob: ratio * A on the unclipped branch, zero once clipped.
    const double d_obj_d_lp = unclipped <= clipped ? ratio * a : 0.0;
    const double d_loss_d_lp = -d_obj_d_lp * inv_b;
    for (std::size_t i = 0; i < ad; ++i) {
      d_mean[r * ad + i] = d_loss_d_lp * g_mean[i];
      d_log_std[i] += d_loss_d_lp * g_ls[i];
    }
    const double diff = values[r] - buf.value_targets[k];
    out.value_loss += diff * diff * inv_b;
    d_value[r] = 2.0 * cfg.value_loss_coef * diff * inv_b;
  }
  out.entropy = gaussian_entropy(log_std);
  if (cfg.entropy_coef != 0.0) {
    for (std::size_t i = 0; i < ad; ++i) {
      if (log_std[i] > kLogStdMin && log_std[i] < kLogStdMax) d_log_std[i] -= cfg.entropy_coef;
    }
  }
  out.loss = out.policy_loss + cfg.value_loss_coef * out.value_loss - cfg.entropy_coef * out.entropy;

  mlp_backward(ac.actor, ac.actor_params(), actor_cache, d_mean,
               grad.subspan(0, ac.actor.param_count()));
  mlp_backward(ac.critic, ac.critic_params(), critic_cache, d_value,
               grad.subspan(ac.critic_offset(), ac.critic.param_count()));
  return out;
}

PpoStats ppo_update(ActorCritic& ac, AdamState& adam, const RolloutBuffer& buf, const PpoConfig& cfg,
                    Rng& shuffle_rng) {
  const std::size_t n = buf.size();
  if (n == 0 || buf.advantages.size() != n) throw ContractViolation("ppo_update: buffer incomplete");
  if (adam.m.size() != ac.theta.size()) throw ContractViolation("ppo_update: optimizer/param mismatch");

  double mu = 0.0;
  for (double a : buf.advantages) mu += a;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double a : buf.advantages) var += (a - mu) * (a - mu);
  const double sd = std::sqrt(var / static_cast<double>(n));
  std::vector<double> adv(n);
  for (std::size_t i = 0; i < n; ++i) adv[i] = sd > 0.0 ? (buf.advantages[i] - mu) / sd : buf.advantages[i] - mu;

  PpoStats stats;
  {
    double m = 0.0, v = 0.0;
    for (double a : adv) m += a;
    m /= static_cast<double>(n);
    for (double a : adv) v += (a - m) * (a - m);
    stats.advantage_mean = m;
    stats.advantage_std = std::sqrt(v / static_cast<double>(n));
  }

  std::vector<std::size_t> perm(n);
  std::vector<double> grad(ac.theta.size());
  const std::size_t mb = std::max<std::size_t>(1, cfg.minibatch);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[shuffle_rng.below(i + 1)]);
    for (std::size_t start = 0; start < n; start += mb) {
      const std::size_t len = std::min(mb, n - start);
      const auto loss = ppo_minibatch_loss(
          ac, buf, std::span<const std::size_t>(perm).subspan(start, len), adv, cfg, grad);
      if (!std::isfinite(loss.loss)) {
        std::ostringstream ss;
        ss << "epoch " << epoch << " minibatch " << start / mb << ": policy_loss=" << loss.policy_loss
           << " value_loss=" << loss.value_loss << " mean_ratio=" << loss.mean_ratio;
        throw NumericalBlowup("ppo loss", ss.str());
      }
      stats.grad_norm += adam_step(adam, ac.theta, grad, cfg.lr, cfg.max_grad_norm);
      stats.policy_loss += loss.policy_loss;
      stats.value_loss += loss.value_loss;
      stats.entropy += loss.entropy;
      stats.mean_ratio += loss.mean_ratio;
      stats.clip_fraction += loss.clip_fraction;
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    const double k = static_cast<double>(stats.minibatches);
    stats.grad_norm /= k;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.mean_ratio /= k;
    stats.clip_fraction /= k;
  }
  return stats;
}

std::string ppo_log_header() { return "update,steps,mean_reward,probe_asr,clip_frac,value_loss,mode\n"; }

std::string ppo_log_row(const TrainLogRow& row) {
  std::ostringstream ss;
  ss << row.update << ',' << row.steps << ',' << format_double(row.mean_reward) << ','
     << (row.probe_asr ? format_double(*row.probe_asr) : "") << ',' << format_double(row.clip_frac)
     << ',' << format_double(row.value_loss) << ',' << row.mode << '\n';
  return ss.str();
}

double probe_success_rate(const ControllerFactory& controller, std::span<const WorldSpec> probe,
                          const TrainOptions& options, int threads) {
  if (probe.empty()) return 0.0;
  EvalOptions eo;
  eo.arm = options.arm;
  eo.mode = KnobEstimateMode::ground_truth();
  eo.criterion = options.env.success;
  eo.seed = derive_seed(options.seed, kProbeKey);
  eo.threads = threads;
  eo.constants = options.constants;
  return evaluate(controller, probe, eo).metrics.r_asr;
}

TrainResult train_ppo(const PpoConfig& cfg, std::span<const WorldSpec> worlds, int total_updates,
                      const TrainOptions& options) {
  if (worlds.empty()) throw ContractViolation("train_ppo: empty world set");
  const std::size_t dof = arm_dof(options.arm);
  Rng init_rng(derive_seed(options.seed, kInitKey));
  TrainResult result;
  result.final_policy = ActorCritic::create(2 * dof + 3, dof, cfg.hidden, init_rng, cfg.init_log_std);
  ActorCritic& ac = result.final_policy;
  AdamState adam(ac.theta.size());

  EnvConfig env_cfg = options.env;
  env_cfg.arm = options.arm;
  const auto ckpt_dir = options.out_dir / "checkpoints";
  auto save = [&](std::int64_t update) {
    if (!options.write_files) return;
    char name[64];
    std::snprintf(name, sizeof(name), "ppo_update_%05lld.json", static_cast<long long>(update));
    const auto path = ckpt_dir / name;
    save_checkpoint(ppo_checkpoint(ac, options.arm, update), path);
    result.checkpoints.push_back(path);
  };

  std::ostringstream log;
  log << ppo_log_header();
  const std::int64_t steps_per_update =
      static_cast<std::int64_t>(cfg.workers) * cfg.episodes_per_worker * cfg.episode_steps;
  for (int u = 0; u < total_updates; ++u) {
    const bool noisy = options.noise_from_start ||
                       (options.curriculum_updates && u >= *options.curriculum_updates);
    const KnobEstimateMode mode =
        noisy ? KnobEstimateMode::noisy(options.noise_sigma) : KnobEstimateMode::ground_truth();
    RolloutBuffer buf = collect_rollouts(ac, worlds, {options.seed, u, mode}, cfg, env_cfg,
                                         options.constants);
    finalize_advantages(buf, cfg);
    Rng shuffle(derive_seed(options.seed, kShuffleKey, static_cast<std::uint64_t>(u)));
    const PpoStats stats = ppo_update(ac, adam, buf, cfg, shuffle);

    TrainLogRow row;
    row.update = u;
    row.steps = steps_per_update * (u + 1);
    row.mean_reward = std::accumulate(buf.episode_returns.begin(), buf.episode_returns.end(), 0.0) /
                      static_cast<double>(buf.episode_returns.size());
    row.clip_frac = stats.clip_fraction;
    row.value_loss = stats.value_loss;
    row.mode = to_string(mode);
    const bool last = u + 1 == total_updates;
    if (!options.probe_worlds.empty() && options.probe_every > 0 &&
        ((u + 1) % options.probe_every == 0 || last)) {
      auto snapshot = std::make_shared<const ActorCritic>(ac);
      row.probe_asr = probe_success_rate(
          [snapshot] { return std::make_unique<PpoController>(snapshot); }, options.probe_worlds,
          options, cfg.threads);
    }
    log << ppo_log_row(row);
    result.log.push_back(row);
    if (last || (options.checkpoint_every > 0 && (u + 1) % options.checkpoint_every == 0)) save(u + 1);
  }
  result.log_csv = log.str();
  if (options.write_files) write_text_file(options.out_dir / "train_log.csv", result.log_csv);
  return result;
}

}  // namespace doorsim
