#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "doorsim/controller.hpp"
#include "doorsim/env.hpp"
#include "doorsim/neural.hpp"

namespace doorsim {

struct PpoConfig {
  int workers = 8;
  int episodes_per_worker = 8;
  int episode_steps = 512;
  std::size_t minibatch = 256;
  double clip = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double lr = 1e-3;
  int epochs = 10;
  double entropy_coef = 0.0;
  double value_loss_coef = 0.5;
  double max_grad_norm = 0.5;
  std::size_t hidden = 64;
  double init_log_std = 0.0;
  int threads = 1;
};

/// Gaussian policy with a state-independent log_std plus a separate value
/// network. All trainable parameters share one flat vector:
/// [actor MLP | log_std | critic MLP].
struct ActorCritic {
  MlpShape actor;
  MlpShape critic;
  std::size_t obs_dim = 0;
  std::size_t action_dim = 0;
  std::vector<double> theta;

  static ActorCritic create(std::size_t obs_dim, std::size_t action_dim, std::size_t hidden,
                            Rng& rng, double init_log_std = 0.0);

  std::size_t log_std_offset() const { return actor.param_count(); }
  std::size_t critic_offset() const { return actor.param_count() + action_dim; }
  std::span<const double> actor_params() const { return {theta.data(), actor.param_count()}; }
  std::span<const double> log_std() const { return {theta.data() + log_std_offset(), action_dim}; }
  std::span<const double> critic_params() const {
    return {theta.data() + critic_offset(), critic.param_count()};
  }

  std::vector<double> mean_action(std::span<const double> obs) const;
  double value(std::span<const double> obs) const;
};

Checkpoint ppo_checkpoint(const ActorCritic& ac, ArmType arm, std::int64_t step);
ActorCritic ppo_from_checkpoint(const Checkpoint& ckpt);

/// Mean-action controller over a policy snapshot.
class PpoController final : public Controller {
 public:
  explicit PpoController(std::shared_ptr<const ActorCritic> policy) : policy_(std::move(policy)) {}
  std::vector<double> act(const DoorEnv& env, const Observation& obs) override;

 private:
  std::shared_ptr<const ActorCritic> policy_;
};

/// Flat transition storage, worker-major then episode-major then time.
struct RolloutBuffer {
  std::size_t obs_dim = 0;
  std::size_t action_dim = 0;
  std::vector<double> obs;
  std::vector<double> actions;
  std::vector<double> log_prob_old;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> dones;
  /// V(s_T) after the last step of each episode.
  std::vector<double> bootstrap_values;
  /// Start index of each episode.
  std::vector<std::size_t> episode_starts;
  std::vector<double> episode_returns;
  std::vector<std::string> episode_worlds;

  std::vector<double> advantages;
  std::vector<double> value_targets;

  std::size_t size() const { return rewards.size(); }
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> value_targets;
};

/// values has one more entry than rewards (bootstrap for the final state).
/// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t;
/// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}; target_t = A_t + V_t.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> dones, double gamma, double lambda);

struct RolloutRequest {
  std::uint64_t run_seed = 0;
  std::int64_t update = 0;
  KnobEstimateMode mode;
};

/// Runs workers x episodes_per_worker episodes. Worker w draws its world with
/// derive_seed(run_seed, update, w) and its episodes from fixed per-worker
/// seeds, so the buffer does not depend on cfg.threads.
RolloutBuffer collect_rollouts(const ActorCritic& snapshot, std::span<const WorldSpec> worlds,
                               const RolloutRequest& request, const PpoConfig& cfg,
                               const EnvConfig& env_cfg, const DynamicsConstants& constants = {});

/// Fills buffer.advantages / value_targets episode by episode.
void finalize_advantages(RolloutBuffer& buffer, const PpoConfig& cfg);

/// Per-sample clipped surrogate min(ratio A, clip(ratio, 1-eps, 1+eps) A).
double clipped_objective(double ratio, double advantage, double clip);

struct PpoStats {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;
  double advantage_mean = 0.0;  // after normalization
  double advantage_std = 0.0;   // after normalization
  int minibatches = 0;
};

/// Loss on one minibatch and its gradient w.r.t. theta (overwritten):
/// L = -mean(clipped surrogate) + value_coef mean((V - target)^2) - entropy_coef H.
struct MinibatchLoss {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
};
MinibatchLoss ppo_minibatch_loss(const ActorCritic& ac, const RolloutBuffer& buffer,
                                 std::span<const std::size_t> indices,
                                 std::span<const double> normalized_advantages,
                                 const PpoConfig& cfg, std::span<double> grad);

/// Normalizes advantages over the whole buffer, then `epochs` passes of
/// shuffled minibatches with Adam and global-norm clipping.
PpoStats ppo_update(ActorCritic& ac, AdamState& adam, const RolloutBuffer& buffer,
                    const PpoConfig& cfg, Rng& shuffle_rng);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  ArmType arm = ArmType::FloatingHook;
  EnvConfig env;  // reward weights and criterion; mode comes from the fields below
  DynamicsConstants constants;
  /// Noise level used after the curriculum switch (or throughout when
  /// noise_from_start is set).
  double noise_sigma = 0.02;
  bool noise_from_start = false;
  /// Updates [0, K) use ground truth, later updates use ground truth + noise.
  std::optional<int> curriculum_updates;
  std::vector<WorldSpec> probe_worlds;
  int probe_every = 10;
  int checkpoint_every = 10;
  bool write_files = true;
};

struct TrainLogRow {
  std::int64_t update = 0;
  std::int64_t steps = 0;
  double mean_reward = 0.0;
  std::optional<double> probe_asr;
  double clip_frac = 0.0;
  double value_loss = 0.0;
  std::string mode;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::vector<std::filesystem::path> checkpoints;
  ActorCritic final_policy;
  std::string log_csv;
};

std::string ppo_log_header();
std::string ppo_log_row(const TrainLogRow& row);

TrainResult train_ppo(const PpoConfig& cfg, std::span<const WorldSpec> worlds, int total_updates,
                      const TrainOptions& options);

/// Probe-set success rate used in training logs.
double probe_success_rate(const ControllerFactory& controller, std::span<const WorldSpec> probe,
                          const TrainOptions& options, int threads);

}  // namespace doorsim
