#include <algorithm>
#include <cmath>
#include <memory>

#include "doctest.h"
#include "doorsim/errors.hpp"
#include "doorsim/sac.hpp"
#include "support.hpp"

using namespace doorsim;

namespace {

void push_scalar(ReplayBuffer& rb, double r) {
  const std::vector<double> o{r}, a{0.0};
  rb.push(o, a, r, o, false);
}

// Q(s, a) = -|a - c|^2 with its action gradient.
QFunction quadratic_q(std::vector<double> c) {
  return [c](std::span<const double>, std::span<const double> a, std::size_t n, std::span<double> q,
             std::span<double> dq) {
    const std::size_t ad = c.size();
    for (std::size_t r = 0; r < n; ++r) {
      q[r] = 0.0;
      for (std::size_t i = 0; i < ad; ++i) {
        const double d = a[r * ad + i] - c[i];
        q[r] -= d * d;
        dq[r * ad + i] = -2.0 * d;
      }
    }
  };
}

// mean[alpha log pi - Q] recomputed from the raw policy outputs.
double policy_loss_oracle(const MlpShape& shape, const std::vector<double>& w, const std::vector<double>& obs,
                          std::size_t n, const std::vector<double>& eps, double alpha,
                          const std::vector<double>& c) {
  const auto out = mlp_forward(shape, w, obs, n);
  const std::size_t ad = c.size();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double logp = 0.0, q = 0.0;
    for (std::size_t i = 0; i < ad; ++i) {
      const double mu = out[r * 2 * ad + i];
      const double ls = std::clamp(out[r * 2 * ad + ad + i], -20.0, 2.0);
      const double u = mu + std::exp(ls) * eps[r * ad + i];
      const double a = std::tanh(u);
      logp += -0.5 * eps[r * ad + i] * eps[r * ad + i] - ls - 0.5 * std::log(2 * M_PI) - std::log(1 - a * a);
      q -= (a - c[i]) * (a - c[i]);
    }
    total += alpha * logp - q;
  }
  return total / double(n);
}

SacBatch random_batch(std::size_t n, std::size_t od, std::size_t ad, Rng& rng) {
  SacBatch b;
  b.size = n;
  b.obs.resize(n * od);
  b.next_obs.resize(n * od);
  b.actions.resize(n * ad);
  b.rewards.resize(n);
  b.dones.assign(n, 0.0);
  for (auto& x : b.obs) x = rng.normal();
  for (auto& x : b.next_obs) x = rng.normal();
  for (auto& x : b.actions) x = rng.uniform(-1, 1);
  for (auto& x : b.rewards) x = rng.normal();
  return b;
}

}  // namespace

TEST_CASE("replay buffer is a FIFO that overwrites the oldest entries") {
  ReplayBuffer rb(1, 1, 3);
  for (double r : {1.0, 2.0, 3.0, 4.0}) push_scalar(rb, r);
  CHECK(rb.size() == 3);
  CHECK(rb.reward_at(0) == 2.0);
  CHECK(rb.reward_at(1) == 3.0);
  CHECK(rb.reward_at(2) == 4.0);
  CHECK_THROWS_AS(rb.reward_at(3), ContractViolation);
  Rng rng(1);
  for (int i = 0; i < 30; ++i) {
    for (double r : rb.sample(3, rng).rewards) CHECK((r == 2.0 || r == 3.0 || r == 4.0));
  }
  CHECK(ReplayBuffer(15, 6).capacity() == 1'000'000);
  CHECK_THROWS_AS(ReplayBuffer(1, 1, 0), ContractViolation);
  CHECK_THROWS_AS(rb.push(std::vector<double>{1, 2}, std::vector<double>{0}, 0, std::vector<double>{1}, false),
                  ContractViolation);
}

TEST_CASE("replay sampling is uniform with replacement and rejects empty buffers") {
  ReplayBuffer rb(1, 1, 10);
  Rng rng(2);
  CHECK_THROWS_AS(rb.sample(1, rng), ContractViolation);
  push_scalar(rb, 0.0);
  push_scalar(rb, 1.0);
  CHECK_THROWS_AS(rb.sample(3, rng), ContractViolation);
  // Two entries, draws of 2 per call: with replacement, so any mix is possible.
  std::size_t ones = 0, total = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto b = rb.sample(2, rng);
    for (double r : b.rewards) {
      ones += r == 1.0;
      ++total;
    }
  }
  CHECK(std::abs(double(ones) / double(total) - 0.5) < 0.01);
}

TEST_CASE("soft target hand example") {
  CHECK(std::abs(soft_target(1.0, 0.99, 0.0, 2.0, 0.2, -1.0) - 3.178) < 1e-12);
  CHECK(soft_target(1.0, 0.99, 1.0, 2.0, 0.2, -1.0) == 1.0);
}

TEST_CASE("batch targets use the minimum of the twin target critics") {
  Rng rng(3);
  SacAgent agent = SacAgent::create(4, 2, 8, rng, 0.3);
  agent.q2_target = mlp_init(agent.q, rng);  // make the heads disagree
  SacBatch batch = random_batch(6, 4, 2, rng);
  batch.dones[2] = 1.0;
  std::vector<double> noise(12);
  for (auto& x : noise) x = rng.normal();
  SacConfig cfg;
  const auto y = sac_targets(agent, batch, noise, cfg);

  const auto out = mlp_forward(agent.policy, agent.policy_params, batch.next_obs, 6);
  const auto s = squashed_sample(out, 2, noise);
  for (std::size_t r = 0; r < 6; ++r) {
    std::vector<double> x(batch.next_obs.begin() + r * 4, batch.next_obs.begin() + (r + 1) * 4);
    x.push_back(s.actions[r * 2]);
    x.push_back(s.actions[r * 2 + 1]);
    const double q1 = mlp_forward(agent.q, agent.q1_target, x)[0];
    const double q2 = mlp_forward(agent.q, agent.q2_target, x)[0];
    const double expected = batch.rewards[r] + (r == 2 ? 0.0 : 0.99 * (std::min(q1, q2) - 0.3 * s.log_prob[r]));
    CHECK(y[r] == doctest::Approx(expected).epsilon(1e-12));
  }
  cfg.twin_q = false;
  const auto single = sac_targets(agent, batch, noise, cfg);
  CHECK(single[2] == batch.rewards[2]);
}

TEST_CASE("squashed samples stay inside the action box with consistent log-probs") {
  Rng rng(4);
  std::vector<double> out(5 * 6), noise(5 * 3);
  for (auto& x : out) x = rng.normal(0, 2);
  for (auto& x : noise) x = rng.normal();
  const auto s = squashed_sample(out, 3, noise);
  for (std::size_t r = 0; r < 5; ++r) {
    double lp = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      const double a = s.actions[r * 3 + i];
      CHECK(std::abs(a) < 1.0);
      const double ls = std::clamp(out[r * 6 + 3 + i], -20.0, 2.0);
      lp += -0.5 * noise[r * 3 + i] * noise[r * 3 + i] - ls - 0.5 * std::log(2 * M_PI) - std::log(1 - a * a);
    }
    CHECK(s.log_prob[r] == doctest::Approx(lp).epsilon(1e-9));
  }
  CHECK_THROWS_AS(squashed_sample(out, 3, std::vector<double>(4)), ContractViolation);
}

TEST_CASE("q loss is half the mean squared error with correct gradients") {
  Rng rng(5);
  SacAgent agent = SacAgent::create(3, 2, 8, rng);
  const SacBatch batch = random_batch(7, 3, 2, rng);
  std::vector<double> y(7);
  for (std::size_t r = 0; r < 7; ++r) {
    std::vector<double> x(batch.obs.begin() + r * 3, batch.obs.begin() + (r + 1) * 3);
    x.push_back(batch.actions[r * 2]);
    x.push_back(batch.actions[r * 2 + 1]);
    y[r] = mlp_forward(agent.q, agent.q1, x)[0];
  }
  std::vector<double> g1(agent.q1.size()), g2(agent.q2.size());
  auto loss = q_loss(agent, batch, y, g1, g2);
  CHECK(loss.loss1 == 0.0);
  for (double g : g1) CHECK(g == 0.0);

  for (auto& v : y) v += rng.normal();
  loss = q_loss(agent, batch, y, g1, g2);
  double worst = 0.0;
  const double h = 1e-3;
  for (std::size_t i = 0; i < agent.q1.size(); ++i) {
    auto f = [&](double d) {
      SacAgent p = agent;
      p.q1[i] += d;
      std::vector<double> none;
      return q_loss(p, batch, y, g2, none).loss1;
    };
    const double num = (8 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12 * h);
    worst = std::max(worst, std::abs(g1[i] - num) / std::max({std::abs(g1[i]), std::abs(num), 1e-6}));
  }
  INFO("max relative error " << worst);
  CHECK(worst < 1e-6);

  std::vector<double> none;
  CHECK(q_loss(agent, batch, y, g1, none).loss2 == 0.0);
  CHECK_THROWS_AS(q_loss(agent, batch, std::vector<double>(3), g1, g2), ContractViolation);
}

TEST_CASE("policy loss gradient") {
  Rng rng(6);
  const std::size_t od = 4, ad = 2, n = 5;
  const MlpShape shape = MlpShape::two_hidden(od, 2 * ad, 8);
  auto w = mlp_init(shape, rng, 0.5);
  std::vector<double> obs(n * od), eps(n * ad);
  for (auto& x : obs) x = rng.normal();
  for (auto& x : eps) x = rng.normal();
  const std::vector<double> c{0.3, -0.6};
  std::vector<double> grad(w.size());

  SUBCASE("no entropy term and a flat critic give zero gradient") {
    const QFunction flat = [](std::span<const double>, std::span<const double>, std::size_t n2,
                              std::span<double> q, std::span<double> dq) {
      std::fill_n(q.begin(), n2, 4.0);
      std::fill(dq.begin(), dq.end(), 0.0);
    };
    const auto res = policy_loss(shape, w, obs, n, eps, 0.0, flat, grad);
    CHECK(res.loss == doctest::Approx(-4.0));
    for (double g : grad) CHECK(g == 0.0);
  }
  SUBCASE("Q = -|a|^2 pulls the mean toward zero") {
    std::vector<double> z(shape.param_count(), 0.0);
    const std::size_t bias = shape.bias_offset(2);
    z[bias] = 0.7;       // mean of dimension 0
    z[bias + 1] = -0.4;  // mean of dimension 1
    z[bias + 2] = -20.5; // log_std clamped: no noise reaches the action
    z[bias + 3] = -20.5;
    const std::vector<double> one_obs(od, 0.1), e(ad, 0.0);
    policy_loss(shape, z, one_obs, 1, e, 0.0, quadratic_q({0.0, 0.0}), grad);
    for (std::size_t i = 0; i < 2; ++i) {
      const double m = z[bias + i], t = std::tanh(m);
      CHECK(grad[bias + i] == doctest::Approx(2 * t * (1 - t * t)).epsilon(1e-9));
    }
    CHECK(grad[bias] > 0.0);
    CHECK(grad[bias + 1] < 0.0);
    CHECK(grad[bias + 2] == 0.0);  // clamped log_std passes no gradient
  }
  SUBCASE("matches a scalar recomputation and finite differences") {
    const double alpha = 0.37;
    const auto res = policy_loss(shape, w, obs, n, eps, alpha, quadratic_q(c), grad);
    CHECK(std::abs(res.loss - policy_loss_oracle(shape, w, obs, n, eps, alpha, c)) < 1e-12);
    double worst = 0.0;
    const double h = 1e-3;
    for (std::size_t i = 0; i < w.size(); ++i) {
      auto f = [&](double d) {
        auto p = w;
        p[i] += d;
        return policy_loss_oracle(shape, p, obs, n, eps, alpha, c);
      };
      const double num = (8 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12 * h);
      worst = std::max(worst, std::abs(grad[i] - num) / std::max({std::abs(grad[i]), std::abs(num), 1e-6}));
    }
    INFO("max relative error " << worst);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("min over twin critics routes the action gradient to the smaller head") {
  Rng rng(8);
  SacAgent agent = SacAgent::create(3, 2, 8, rng);
  const SacBatch batch = random_batch(9, 3, 2, rng);
  std::vector<double> q(9), dq(18);
  min_q_function(agent, true)(batch.obs, batch.actions, 9, q, dq);
  const double h = 1e-5;
  for (std::size_t r = 0; r < 9; ++r) {
    std::vector<double> x(batch.obs.begin() + r * 3, batch.obs.begin() + (r + 1) * 3);
    x.push_back(batch.actions[r * 2]);
    x.push_back(batch.actions[r * 2 + 1]);
    const double q1 = mlp_forward(agent.q, agent.q1, x)[0];
    const double q2 = mlp_forward(agent.q, agent.q2, x)[0];
    CHECK(q[r] == std::min(q1, q2));
    const auto& wq = q1 <= q2 ? agent.q1 : agent.q2;
    for (std::size_t i = 0; i < 2; ++i) {
      auto xp = x, xm = x;
      xp[3 + i] += h;
      xm[3 + i] -= h;
      const double num = (mlp_forward(agent.q, wq, xp)[0] - mlp_forward(agent.q, wq, xm)[0]) / (2 * h);
      CHECK(dq[r * 2 + i] == doctest::Approx(num).epsilon(1e-6));
    }
  }
}

TEST_CASE("temperature moves toward the entropy target") {
  const double target = -6.0;
  CHECK(temperature_gradient(0.0, 6.0, target) == 0.0);
  AdamState st(1);
  CHECK(temperature_update(0.0, st, 6.0, target, 1e-3) == 0.0);
  // Entropy below target (log pi high): temperature rises.
  AdamState up(1);
  CHECK(temperature_update(0.0, up, 8.0, target, 1e-3) > 0.0);
  AdamState down(1);
  CHECK(temperature_update(0.0, down, 2.0, target, 1e-3) < 0.0);
  CHECK(temperature_gradient(std::log(0.5), 8.0, target) == doctest::Approx(-0.5 * 2.0));
}

TEST_CASE("soft target updates") {
  std::vector<double> online{1.0, -2.0, 3.0};
  std::vector<double> t{0.0, 0.0, 0.0};
  target_update(t, online, 1.0);
  CHECK(t == online);

  std::vector<double> a{0.0}, b{1.0};
  target_update(a, b, 0.005);
  CHECK(a[0] == doctest::Approx(0.005).epsilon(1e-15));

  // Geometric convergence: after k steps the gap is (1 - tau)^k.
  std::vector<double> x{0.0};
  for (int k = 1; k <= 1000; ++k) {
    target_update(x, b, 0.005);
    CHECK(std::abs((1.0 - x[0]) - std::pow(0.995, k)) < 1e-12);
  }
  // Drift bound: one update moves the target by at most tau |online - target|.
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> tt{rng.normal()}, oo{rng.normal()};
    const double before = tt[0];
    target_update(tt, oo, 0.005);
    CHECK(std::abs(tt[0] - before) <= 0.005 * std::abs(oo[0] - before) * (1 + 1e-12));
  }
  CHECK_THROWS_AS(target_update(t, std::vector<double>{1.0}, 0.5), ContractViolation);
}

TEST_CASE("one collection-only epoch fills replay with 5120 transitions") {
  SacConfig cfg;
  cfg.grad_steps_per_env_step = 0;
  cfg.hidden = 16;
  TrainOptions opt;
  opt.write_files = false;
  const auto worlds = sample_world_set(1, 3, KnobType::Pull, OpenDirection::Pull);
  const auto result = train_sac(cfg, worlds, 1, opt);
  CHECK(result.replay_size == 5120);
  REQUIRE(result.log.size() == 1);
  CHECK(result.log[0].env_steps == 5120);
  CHECK(result.log[0].q_loss == 0.0);
  CHECK(result.log[0].temperature == 1.0);
}

TEST_CASE("SAC training is deterministic and checkpoints round-trip") {
  testing::TempDir dir("sac");
  SacConfig cfg;
  cfg.hidden = 8;
  cfg.batch = 16;
  cfg.episodes_per_epoch = 2;
  cfg.episode_steps = 24;
  const auto worlds = sample_world_set(2, 3, KnobType::Lever, OpenDirection::Pull);
  TrainOptions opt;
  opt.out_dir = dir.path();
  opt.seed = 5;
  opt.probe_worlds = sample_world_set(3, 2, KnobType::Lever, OpenDirection::Pull);
  opt.probe_every = 1;
  const auto a = train_sac(cfg, worlds, 2, opt);
  opt.write_files = false;
  const auto b = train_sac(cfg, worlds, 2, opt);
  CHECK(a.log_csv == b.log_csv);
  CHECK(a.log_csv.rfind(sac_log_header(), 0) == 0);
  CHECK(a.log[1].q_loss > 0.0);
  CHECK(a.log[1].temperature != 1.0);
  CHECK(a.log[0].probe_asr.has_value());
  REQUIRE(a.checkpoints.size() == 1);
  CHECK(a.checkpoints[0].filename() == "sac_epoch_00002.json");

  const auto back = sac_from_checkpoint(load_checkpoint(a.checkpoints[0]));
  CHECK(back.policy_params == a.agent.policy_params);
  CHECK(back.q1 == a.agent.q1);
  CHECK(back.q2_target == a.agent.q2_target);
  CHECK(back.log_temperature == a.agent.log_temperature);
  const auto ppo_ckpt = ppo_checkpoint(ActorCritic::create(15, 6, 8, *std::make_unique<Rng>(1)), ArmType::FloatingHook, 0);
  CHECK_THROWS_AS(sac_from_checkpoint(ppo_ckpt), SchemaError);

  SacController ctl(std::make_shared<const SacAgent>(back));
  DoorEnv env;
  const auto obs = env.reset(worlds[0], 0);
  const auto act = ctl.act(env, obs);
  CHECK(act == back.deterministic_action(obs));
}
