#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "doorsim/controller.hpp"
#include "doorsim/neural.hpp"
#include "doorsim/ppo.hpp"

namespace doorsim {

struct SacConfig {
  double gamma = 0.99;
  double lr_policy = 1e-3;
  double lr_q = 1e-3;
  double lr_temperature = 1e-3;
  double tau = 0.005;
  int target_update_period = 1;
  bool auto_entropy = true;
  double init_temperature = 1.0;
  /// Defaults to -action_dim when unset.
  std::optional<double> target_entropy;
  std::size_t batch = 256;
  int episodes_per_epoch = 10;
  int episode_steps = 512;
  int grad_steps_per_env_step = 1;
  bool twin_q = true;
  std::size_t replay_capacity = 1'000'000;
  std::size_t hidden = 64;
};

struct SacBatch {
  std::size_t size = 0;
  std::vector<double> obs;
  std::vector<double> actions;
  std::vector<double> rewards;
  std::vector<double> next_obs;
  std::vector<double> dones;
};

/// Fixed-capacity FIFO of transitions. Storage grows up to capacity and is
/// then overwritten oldest first.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t obs_dim, std::size_t action_dim, std::size_t capacity = 1'000'000);

  void push(std::span<const double> obs, std::span<const double> action, double reward,
            std::span<const double> next_obs, bool done);
  /// Uniform with replacement over the current contents.
  SacBatch sample(std::size_t batch, Rng& rng) const;

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t obs_dim() const { return obs_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  /// Reward stored in slot i counted from the oldest entry.
  double reward_at(std::size_t i) const;

 private:
  std::size_t obs_dim_, action_dim_, capacity_;
  std::size_t cursor_ = 0;
  std::size_t size_ = 0;
  std::vector<double> obs_, actions_, rewards_, next_obs_, dones_;
};

/// Squashed Gaussian actor (outputs mean and log_std) plus twin Q networks
/// over [obs, action] and their EMA targets.
struct SacAgent {
  std::size_t obs_dim = 0;
  std::size_t action_dim = 0;
  MlpShape policy;
  MlpShape q;
  std::vector<double> policy_params;
  std::vector<double> q1, q2, q1_target, q2_target;
  double log_temperature = 0.0;

  static SacAgent create(std::size_t obs_dim, std::size_t action_dim, std::size_t hidden, Rng& rng,
                         double init_temperature = 1.0);

  double temperature() const;
  /// tanh of the policy mean.
  std::vector<double> deterministic_action(std::span<const double> obs) const;
};

/// y = r + gamma (1 - done) (min target Q(s', a') - temperature log pi(a'|s')).
double soft_target(double reward, double gamma, double done, double next_q_min,
                   double temperature, double next_log_prob);

/// Samples a = tanh(mean + std * noise) for a batch of policy outputs
/// (batch x 2*action_dim). Fills actions, pre-squash values and log-probs.
struct SquashedSample {
  std::vector<double> actions;
  std::vector<double> pre_squash;
  std::vector<double> log_prob;
};
SquashedSample squashed_sample(std::span<const double> policy_out, std::size_t action_dim,
                               std::span<const double> noise);

/// Bootstrap targets for a batch; noise drives a' ~ pi(s') (batch x action_dim).
std::vector<double> sac_targets(const SacAgent& agent, const SacBatch& batch,
                                std::span<const double> noise, const SacConfig& cfg);

struct QLoss {
  double loss1 = 0.0;
  double loss2 = 0.0;
};
/// 1/2 mean (Q_i(s,a) - y)^2 per head; gradients overwrite grad_q1 / grad_q2.
QLoss q_loss(const SacAgent& agent, const SacBatch& batch, std::span<const double> targets,
             std::span<double> grad_q1, std::span<double> grad_q2);

/// Critic used by the policy loss: writes Q(s, a) (batch) and dQ/da
/// (batch x action_dim) for the given observations and actions.
using QFunction = std::function<void(std::span<const double> obs, std::span<const double> actions,
                                     std::size_t batch, std::span<double> q,
                                     std::span<double> dq_da)>;

/// Element-wise minimum over the agent's online Q heads (one head when
/// twin_q is off).
QFunction min_q_function(const SacAgent& agent, bool twin_q);

struct PolicyLoss {
  double loss = 0.0;
  double mean_log_prob = 0.0;
};
/// mean[temperature log pi(a|s) - Q(s,a)] with a reparameterized from the
/// policy through `noise`; gradient w.r.t. the policy parameters overwrites grad.
PolicyLoss policy_loss(const MlpShape& policy, std::span<const double> policy_params,
                       std::span<const double> obs, std::size_t batch,
                       std::span<const double> noise, double temperature, const QFunction& q,
                       std::span<double> grad);

/// d/d(log temperature) of mean[-temperature (log pi + target_entropy)].
double temperature_gradient(double log_temperature, double mean_log_prob, double target_entropy);
/// One Adam step on the log temperature.
double temperature_update(double log_temperature, AdamState& state, double mean_log_prob,
                          double target_entropy, double lr);

/// target <- (1 - tau) target + tau online.
void target_update(std::span<double> target, std::span<const double> online, double tau);

Checkpoint sac_checkpoint(const SacAgent& agent, ArmType arm, std::int64_t step);
SacAgent sac_from_checkpoint(const Checkpoint& ckpt);

class SacController final : public Controller {
 public:
  explicit SacController(std::shared_ptr<const SacAgent> agent) : agent_(std::move(agent)) {}
  std::vector<double> act(const DoorEnv& env, const Observation& obs) override;

 private:
  std::shared_ptr<const SacAgent> agent_;
};

struct SacLogRow {
  std::int64_t epoch = 0;
  std::int64_t env_steps = 0;
  double mean_reward = 0.0;
  std::optional<double> probe_asr;
  double q_loss = 0.0;
  double policy_loss = 0.0;
  double temperature = 0.0;
  std::string mode;
};

struct SacTrainResult {
  std::vector<SacLogRow> log;
  std::vector<std::filesystem::path> checkpoints;
  SacAgent agent;
  std::size_t replay_size = 0;
  std::string log_csv;
};

std::string sac_log_header();
std::string sac_log_row(const SacLogRow& row);

/// Per epoch: episodes_per_epoch episodes into replay, then one update
/// (Q, policy, temperature, targets) per collected step. Reuses the PPO
/// TrainOptions for output, seeding, curriculum and probing.
SacTrainResult train_sac(const SacConfig& cfg, std::span<const WorldSpec> worlds, int epochs,
                         const TrainOptions& options);

}  // namespace doorsim
