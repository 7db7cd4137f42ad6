#include "doorsim/sac.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "doorsim/errors.hpp"
#include "doorsim/io.hpp"

namespace doorsim {

namespace {

constexpr std::uint64_t kInitKey = 1;
constexpr std::uint64_t kStreamKey = 11;
constexpr std::uint64_t kEpisodeKey = 12;

std::vector<double> concat_rows(std::span<const double> a, std::size_t da, std::span<const double> b,
                                std::size_t db, std::size_t n) {
  std::vector<double> out(n * (da + db));
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a.begin() + static_cast<std::ptrdiff_t>(r * da), da,
                out.begin() + static_cast<std::ptrdiff_t>(r * (da + db)));
    std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(r * db), db,
                out.begin() + static_cast<std::ptrdiff_t>(r * (da + db) + da));
  }
  return out;
}

void check_finite(double v, const char* what, std::int64_t epoch) {
  if (!std::isfinite(v)) throw NumericalBlowup(what, "sac epoch " + std::to_string(epoch));
}

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t obs_dim, std::size_t action_dim, std::size_t capacity)
    : obs_dim_(obs_dim), action_dim_(action_dim), capacity_(capacity) {
  if (capacity == 0) throw ContractViolation("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(std::span<const double> obs, std::span<const double> action, double reward,
                        std::span<const double> next_obs, bool done) {
  if (obs.size() != obs_dim_ || next_obs.size() != obs_dim_ || action.size() != action_dim_) {
    throw ContractViolation("ReplayBuffer::push: transition has wrong dimensions");
  }
  if (size_ < capacity_) {
    obs_.insert(obs_.end(), obs.begin(), obs.end());
    actions_.insert(actions_.end(), action.begin(), action.end());
    rewards_.push_back(reward);
    next_obs_.insert(next_obs_.end(), next_obs.begin(), next_obs.end());
    dones_.push_back(done ? 1.0 : 0.0);
    ++size_;
  } else {
    std::copy(obs.begin(), obs.end(), obs_.begin() + static_cast<std::ptrdiff_t>(cursor_ * obs_dim_));
    std::copy(action.begin(), action.end(),
              actions_.begin() + static_cast<std::ptrdiff_t>(cursor_ * action_dim_));
    rewards_[cursor_] = reward;
    std::copy(next_obs.begin(), next_obs.end(),
              next_obs_.begin() + static_cast<std::ptrdiff_t>(cursor_ * obs_dim_));
    dones_[cursor_] = done ? 1.0 : 0.0;
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

double ReplayBuffer::reward_at(std::size_t i) const {
  if (i >= size_) throw ContractViolation("ReplayBuffer::reward_at: index out of range");
  const std::size_t oldest = size_ < capacity_ ? 0 : cursor_;
  return rewards_[(oldest + i) % capacity_];
}

SacBatch ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
  if (batch == 0 || size_ < batch) {
    throw ContractViolation("ReplayBuffer::sample: need " + std::to_string(batch) +
                            " transitions, have " + std::to_string(size_));
  }
  SacBatch b;
  b.size = batch;
  b.obs.resize(batch * obs_dim_);
  b.actions.resize(batch * action_dim_);
  b.rewards.resize(batch);
  b.next_obs.resize(batch * obs_dim_);
  b.dones.resize(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const std::size_t k = rng.below(size_);
    std::copy_n(obs_.begin() + static_cast<std::ptrdiff_t>(k * obs_dim_), obs_dim_,
                b.obs.begin() + static_cast<std::ptrdiff_t>(r * obs_dim_));
    std::copy_n(actions_.begin() + static_cast<std::ptrdiff_t>(k * action_dim_), action_dim_,
                b.actions.begin() + static_cast<std::ptrdiff_t>(r * action_dim_));
    b.rewards[r] = rewards_[k];
    std::copy_n(next_obs_.begin() + static_cast<std::ptrdiff_t>(k * obs_dim_), obs_dim_,
                b.next_obs.begin() + static_cast<std::ptrdiff_t>(r * obs_dim_));
    b.dones[r] = dones_[k];
  }
  return b;
}

SacAgent SacAgent::create(std::size_t obs_dim, std::size_t action_dim, std::size_t hidden, Rng& rng,
                          double init_temperature) {
  if (!(init_temperature > 0.0)) throw ContractViolation("SacAgent: temperature must be positive");
  SacAgent a;
  a.obs_dim = obs_dim;
  a.action_dim = action_dim;
  a.policy = MlpShape::two_hidden(obs_dim, 2 * action_dim, hidden);
  a.q = MlpShape::two_hidden(obs_dim + action_dim, 1, hidden);
  a.policy_params = mlp_init(a.policy, rng, 0.01);
  a.q1 = mlp_init(a.q, rng);
  a.q2 = mlp_init(a.q, rng);
  a.q1_target = a.q1;
  a.q2_target = a.q2;
  a.log_temperature = std::log(init_temperature);
  return a;
}

double SacAgent::temperature() const { return std::exp(log_temperature); }

std::vector<double> SacAgent::deterministic_action(std::span<const double> obs) const {
  auto out = mlp_forward(policy, policy_params, obs, 1);
  out.resize(action_dim);
  for (double& v : out) v = std::tanh(v);
  return out;
}

double soft_target(double reward, double gamma, double done, double next_q_min, double temperature,
                   double next_log_prob) {
  return reward + gamma * (1.0 - done) * (next_q_min - temperature * next_log_prob);
}

SquashedSample squashed_sample(std::span<const double> policy_out, std::size_t ad,
                               std::span<const double> noise) {
  const std::size_t n = policy_out.size() / (2 * ad);
  if (noise.size() != n * ad) throw ContractViolation("squashed_sample: noise has wrong size");
  SquashedSample s;
  s.actions.resize(n * ad);
  s.pre_squash.resize(n * ad);
  s.log_prob.resize(n);
  std::vector<double> ls(ad);
  for (std::size_t r = 0; r < n; ++r) {
    const auto mean = policy_out.subspan(r * 2 * ad, ad);
    for (std::size_t i = 0; i < ad; ++i) {
      ls[i] = std::clamp(policy_out[r * 2 * ad + ad + i], kLogStdMin, kLogStdMax);
      const double u = mean[i] + std::exp(ls[i]) * noise[r * ad + i];
      s.pre_squash[r * ad + i] = u;
      s.actions[r * ad + i] = std::tanh(u);
    }
    s.log_prob[r] = squashed_gaussian_log_prob(
        mean, ls, std::span<const double>(s.pre_squash).subspan(r * ad, ad));
  }
  return s;
}

std::vector<double> sac_targets(const SacAgent& agent, const SacBatch& batch,
                                std::span<const double> noise, const SacConfig& cfg) {
  const std::size_t n = batch.size;
  const auto out = mlp_forward(agent.policy, agent.policy_params, batch.next_obs, n);
  const auto next = squashed_sample(out, agent.action_dim, noise);
  const auto x = concat_rows(batch.next_obs, agent.obs_dim, next.actions, agent.action_dim, n);
  const auto q1 = mlp_forward(agent.q, agent.q1_target, x, n);
  std::vector<double> q2;
  if (cfg.twin_q) q2 = mlp_forward(agent.q, agent.q2_target, x, n);
  const double temp = agent.temperature();
  std::vector<double> y(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double qmin = cfg.twin_q ? std::min(q1[r], q2[r]) : q1[r];
    y[r] = soft_target(batch.rewards[r], cfg.gamma, batch.dones[r], qmin, temp, next.log_prob[r]);
  }
  return y;
}

QLoss q_loss(const SacAgent& agent, const SacBatch& batch, std::span<const double> targets,
             std::span<double> grad_q1, std::span<double> grad_q2) {
  const std::size_t n = batch.size;
  if (targets.size() != n) throw ContractViolation("q_loss: one target per sample required");
  const auto x = concat_rows(batch.obs, agent.obs_dim, batch.actions, agent.action_dim, n);
  QLoss out;
  auto head = [&](const std::vector<double>& w, std::span<double> grad) {
    if (grad.empty()) return 0.0;
    MlpCache cache;
    mlp_forward(agent.q, w, x, n, cache);
    const auto q = cache.output();
    std::vector<double> gy(n);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double diff = q[r] - targets[r];
      loss += 0.5 * diff * diff / static_cast<double>(n);
      gy[r] = diff / static_cast<double>(n);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    mlp_backward(agent.q, w, cache, gy, grad);
    return loss;
  };
  out.loss1 = head(agent.q1, grad_q1);
  out.loss2 = head(agent.q2, grad_q2);
  return out;
}

QFunction min_q_function(const SacAgent& agent, bool twin_q) {
  return [&agent, twin_q](std::span<const double> obs, std::span<const double> actions,
                          std::size_t n, std::span<double> q, std::span<double> dq_da) {
    const std::size_t od = agent.obs_dim, ad = agent.action_dim;
    const auto x = concat_rows(obs, od, actions, ad, n);
    MlpCache c1, c2;
    mlp_forward(agent.q, agent.q1, x, n, c1);
    if (twin_q) mlp_forward(agent.q, agent.q2, x, n, c2);
    std::vector<double> g1(n, 0.0), g2(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const double a = c1.output()[r];
      const bool second = twin_q && c2.output()[r] < a;
      q[r] = second ? c2.output()[r] : a;
      (second ? g2 : g1)[r] = 1.0;
    }
    std::vector<double> unused(agent.q.param_count());
    std::vector<double> gx(n * (od + ad), 0.0), gx2(n * (od + ad), 0.0);
    mlp_backward(agent.q, agent.q1, c1, g1, unused, gx);
    if (twin_q) {
      mlp_backward(agent.q, agent.q2, c2, g2, unused, gx2);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gx2[i];
    }
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(gx.begin() + static_cast<std::ptrdiff_t>(r * (od + ad) + od), ad,
                  dq_da.begin() + static_cast<std::ptrdiff_t>(r * ad));
    }
  };
}

PolicyLoss policy_loss(const MlpShape& shape, std::span<const double> params,
                       std::span<const double> obs, std::size_t n, std::span<const double> noise,
                       double temperature, const QFunction& qf, std::span<double> grad) {
  const std::size_t ad = shape.output() / 2;
  MlpCache cache;
  mlp_forward(shape, params, obs, n, cache);
  const auto out = cache.output();
  const auto s = squashed_sample(out, ad, noise);
  std::vector<double> q(n), dq(n * ad);
  qf(obs, s.actions, n, q, dq);

  PolicyLoss res;
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> gy(n * 2 * ad, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    res.loss += (temperature * s.log_prob[r] - q[r]) * inv_n;
    res.mean_log_prob += s.log_prob[r] * inv_n;
    for (std::size_t i = 0; i < ad; ++i) {
      const std::size_t k = r * ad + i;
      const double raw_ls = out[r * 2 * ad + ad + i];
      const double ls = std::clamp(raw_ls, kLogStdMin, kLogStdMax);
      const double th = s.actions[k];
      // log pi = log N(u) - sum log(1 - tanh(u)^2); with u = mean + std * eps the
      // Gaussian part depends on log_std only (-1 each), and d log pi / du = 2 tanh(u).
      const double dlogp_du = 2.0 * th;
      const double dq_du = dq[k] * (1.0 - th * th);
      const double dl_du = (temperature * dlogp_du - dq_du) * inv_n;
      const double du_dls = std::exp(ls) * noise[k];
      gy[r * 2 * ad + i] = dl_du;
      if (raw_ls > kLogStdMin && raw_ls < kLogStdMax) {
        gy[r * 2 * ad + ad + i] = dl_du * du_dls - temperature * inv_n;
      }
    }
  }
  std::fill(grad.begin(), grad.end(), 0.0);
  mlp_backward(shape, params, cache, gy, grad);
  return res;
}

double temperature_gradient(double log_temperature, double mean_log_prob, double target_entropy) {
  return -std::exp(log_temperature) * (mean_log_prob + target_entropy);
}

double temperature_update(double log_temperature, AdamState& state, double mean_log_prob,
                          double target_entropy, double lr) {
  double p[1] = {log_temperature};
  const double g[1] = {temperature_gradient(log_temperature, mean_log_prob, target_entropy)};
  adam_step(state, p, g, lr);
  return p[0];
}

void target_update(std::span<double> target, std::span<const double> online, double tau) {
  if (target.size() != online.size()) throw ContractViolation("target_update: shape mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = (1.0 - tau) * target[i] + tau * online[i];
}

Checkpoint sac_checkpoint(const SacAgent& a, ArmType arm, std::int64_t step) {
  Checkpoint c;
  c.algorithm = "sac";
  c.step = step;
  c.arm = std::string(to_string(arm));
  c.obs_dim = a.obs_dim;
  c.action_dim = a.action_dim;
  c.hidden = a.policy.sizes[1];
  append_mlp_arrays(c.arrays, "policy", a.policy, a.policy_params);
  append_mlp_arrays(c.arrays, "q1", a.q, a.q1);
  append_mlp_arrays(c.arrays, "q2", a.q, a.q2);
  append_mlp_arrays(c.arrays, "q1_target", a.q, a.q1_target);
  append_mlp_arrays(c.arrays, "q2_target", a.q, a.q2_target);
  c.arrays.push_back({"log_temperature", {1}, {a.log_temperature}});
  return c;
}

SacAgent sac_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.algorithm != "sac") {
    throw SchemaError("algorithm", "expected a sac checkpoint, got '" + ckpt.algorithm + "'");
  }
  if (ckpt.arch != "mlp_tanh") throw SchemaError("arch", "unsupported architecture '" + ckpt.arch + "'");
  Rng unused(0);
  SacAgent a = SacAgent::create(ckpt.obs_dim, ckpt.action_dim, ckpt.hidden, unused);
  read_mlp_arrays(ckpt, "policy", a.policy, a.policy_params);
  read_mlp_arrays(ckpt, "q1", a.q, a.q1);
  read_mlp_arrays(ckpt, "q2", a.q, a.q2);
  read_mlp_arrays(ckpt, "q1_target", a.q, a.q1_target);
  read_mlp_arrays(ckpt, "q2_target", a.q, a.q2_target);
  const auto& lt = ckpt.array("log_temperature");
  if (lt.values.size() != 1) throw SchemaError("log_temperature", "expected one value");
  a.log_temperature = lt.values[0];
  return a;
}

std::vector<double> SacController::act(const DoorEnv&, const Observation& obs) {
  return agent_->deterministic_action(obs);
}

std::string sac_log_header() {
  return "epoch,env_steps,mean_reward,probe_asr,q_loss,policy_loss,alpha,mode\n";
}

std::string sac_log_row(const SacLogRow& row) {
  std::ostringstream ss;
  ss << row.epoch << ',' << row.env_steps << ',' << format_double(row.mean_reward) << ','
     << (row.probe_asr ? format_double(*row.probe_asr) : "") << ',' << format_double(row.q_loss)
     << ',' << format_double(row.policy_loss) << ',' << format_double(row.temperature) << ','
     << row.mode << '\n';
  return ss.str();
}

SacTrainResult train_sac(const SacConfig& cfg, std::span<const WorldSpec> worlds, int epochs,
                         const TrainOptions& options) {
  if (worlds.empty()) throw ContractViolation("train_sac: empty world set");
  if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) throw ContractViolation("train_sac: tau must be in (0, 1]");
  const std::size_t ad = arm_dof(options.arm);
  const std::size_t od = 2 * ad + 3;
  Rng init_rng(derive_seed(options.seed, kInitKey));
  SacTrainResult result;
  result.agent = SacAgent::create(od, ad, cfg.hidden, init_rng, cfg.init_temperature);
  SacAgent& agent = result.agent;
  AdamState adam_policy(agent.policy_params.size()), adam_q1(agent.q1.size()),
      adam_q2(agent.q2.size()), adam_temp(1);
  const double target_entropy = cfg.target_entropy.value_or(-static_cast<double>(ad));
  ReplayBuffer replay(od, ad, cfg.replay_capacity);
  Rng rng(derive_seed(options.seed, kStreamKey));

  EnvConfig env_cfg = options.env;
  env_cfg.arm = options.arm;
  env_cfg.max_episode_steps = cfg.episode_steps;
  env_cfg.terminate_on_success = false;

  auto save = [&](std::int64_t epoch) {
    if (!options.write_files) return;
    char name[64];
    std::snprintf(name, sizeof(name), "sac_epoch_%05lld.json", static_cast<long long>(epoch));
    const auto path = options.out_dir / "checkpoints" / name;
    save_checkpoint(sac_checkpoint(agent, options.arm, epoch), path);
    result.checkpoints.push_back(path);
  };

  std::ostringstream log;
  log << sac_log_header();
  std::vector<double> grad_policy(agent.policy_params.size()), grad_q1(agent.q1.size()),
      grad_q2(agent.q2.size()), noise, out;
  std::int64_t env_steps = 0, grad_steps = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const bool noisy = options.noise_from_start ||
                       (options.curriculum_updates && epoch >= *options.curriculum_updates);
    env_cfg.mode = noisy ? KnobEstimateMode::noisy(options.noise_sigma) : KnobEstimateMode::ground_truth();
    DoorEnv env(env_cfg, options.constants);
    double return_sum = 0.0;
    std::int64_t collected = 0;
    for (int e = 0; e < cfg.episodes_per_epoch; ++e) {
      const WorldSpec& world = worlds[rng.below(worlds.size())];
      Observation obs = env.reset(world, derive_seed(options.seed, kEpisodeKey,
                                                     static_cast<std::uint64_t>(epoch),
                                                     static_cast<std::uint64_t>(e)));
      while (!env.done()) {
        out = mlp_forward(agent.policy, agent.policy_params, obs, 1);
        noise.resize(ad);
        for (double& z : noise) z = rng.normal();
        const auto s = squashed_sample(out, ad, noise);
        StepResult r = env.step(s.actions);
        const bool terminal = r.done && r.info.success && env_cfg.terminate_on_success;
        replay.push(obs, s.actions, r.reward, r.obs, terminal);
        return_sum += r.reward;
        obs = std::move(r.obs);
        ++collected;
      }
    }
    env_steps += collected;

    double q_sum = 0.0, p_sum = 0.0;
    std::int64_t updates = 0;
    const std::int64_t planned = collected * cfg.grad_steps_per_env_step;
    for (std::int64_t k = 0; k < planned && replay.size() >= cfg.batch; ++k) {
      const SacBatch batch = replay.sample(cfg.batch, rng);
      noise.resize(cfg.batch * ad);
      for (double& z : noise) z = rng.normal();
      const auto y = sac_targets(agent, batch, noise, cfg);
      const QLoss ql = q_loss(agent, batch, y, grad_q1, cfg.twin_q ? std::span<double>(grad_q2)
                                                                   : std::span<double>());
      adam_step(adam_q1, agent.q1, grad_q1, cfg.lr_q);
      if (cfg.twin_q) adam_step(adam_q2, agent.q2, grad_q2, cfg.lr_q);

      for (double& z : noise) z = rng.normal();
      const PolicyLoss pl = policy_loss(agent.policy, agent.policy_params, batch.obs, batch.size,
                                        noise, agent.temperature(),
                                        min_q_function(agent, cfg.twin_q), grad_policy);
      adam_step(adam_policy, agent.policy_params, grad_policy, cfg.lr_policy);
      if (cfg.auto_entropy) {
        agent.log_temperature = temperature_update(agent.log_temperature, adam_temp,
                                                   pl.mean_log_prob, target_entropy,
                                                   cfg.lr_temperature);
      }
      ++grad_steps;
      if (grad_steps % std::max(1, cfg.target_update_period) == 0) {
        target_update(agent.q1_target, agent.q1, cfg.tau);
        if (cfg.twin_q) target_update(agent.q2_target, agent.q2, cfg.tau);
      }
      check_finite(ql.loss1 + ql.loss2, "q loss", epoch);
      check_finite(pl.loss, "policy loss", epoch);
      q_sum += ql.loss1 + ql.loss2;
      p_sum += pl.loss;
      ++updates;
    }

    SacLogRow row;
    row.epoch = epoch;
    row.env_steps = env_steps;
    row.mean_reward = return_sum / std::max(1, cfg.episodes_per_epoch);
    row.q_loss = updates ? q_sum / static_cast<double>(updates) : 0.0;
    row.policy_loss = updates ? p_sum / static_cast<double>(updates) : 0.0;
    row.temperature = agent.temperature();
    row.mode = to_string(env_cfg.mode);
    const bool last = epoch + 1 == epochs;
    if (!options.probe_worlds.empty() && options.probe_every > 0 &&
        ((epoch + 1) % options.probe_every == 0 || last)) {
      auto snapshot = std::make_shared<const SacAgent>(agent);
      row.probe_asr = probe_success_rate(
          [snapshot] { return std::make_unique<SacController>(snapshot); }, options.probe_worlds,
          options, 1);
    }
    log << sac_log_row(row);
    result.log.push_back(row);
    if (last || (options.checkpoint_every > 0 && (epoch + 1) % options.checkpoint_every == 0)) {
      save(epoch + 1);
    }
  }
  result.replay_size = replay.size();
  result.log_csv = log.str();
  if (options.write_files) write_text_file(options.out_dir / "train_log.csv", result.log_csv);
  return result;
}

}  // namespace doorsim
