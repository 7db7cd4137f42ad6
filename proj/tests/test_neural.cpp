#include <cmath>
#include <cstring>

#include "doctest.h"
#include "doorsim/errors.hpp"
#include "doorsim/neural.hpp"
#include "support.hpp"

using namespace doorsim;

namespace {

// Straightforward per-sample forward pass used as an oracle.
std::vector<double> dense_oracle(const MlpShape& shape, const std::vector<double>& w,
                                 std::vector<double> x) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < shape.layers(); ++l) {
    const std::size_t in = shape.sizes[l], out = shape.sizes[l + 1];
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = w[off + in * out + o];
      for (std::size_t i = 0; i < in; ++i) s += w[off + o * in + i] * x[i];
      y[o] = l + 1 < shape.layers() ? std::tanh(s) : s;
    }
    off += in * out + out;
    x = std::move(y);
  }
  return x;
}

MlpShape random_shape(Rng& rng) {
  MlpShape s;
  s.sizes.push_back(1 + rng.below(8));
  const std::size_t hidden_layers = 1 + rng.below(2);
  for (std::size_t i = 0; i < hidden_layers; ++i) s.sizes.push_back(1 + rng.below(16));
  s.sizes.push_back(1 + rng.below(4));
  return s;
}

// Scalar loss sum_k c_k y_k over the batch.
double weighted_output(const MlpShape& shape, const std::vector<double>& w,
                       const std::vector<double>& x, std::size_t batch, const std::vector<double>& c) {
  const auto y = mlp_forward(shape, w, x, batch);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
  return s;
}

}  // namespace

TEST_CASE("forward pass hand examples") {
  const MlpShape tiny{{1, 1, 1, 1}};
  // W0=1,b0=0,W1=1,b1=0,W2=1,b2=0
  const std::vector<double> ones{1, 0, 1, 0, 1, 0};
  const auto y = mlp_forward(tiny, ones, std::vector<double>{0.5});
  CHECK(std::abs(y[0] - std::tanh(std::tanh(0.5))) < 1e-15);
  CHECK(std::abs(y[0] - 0.4318081805950961) < 1e-12);

  const auto shape = MlpShape::two_hidden(21, 7);
  const std::vector<double> zeros(shape.param_count(), 0.0);
  const auto z = mlp_forward(shape, zeros, std::vector<double>(21, 0.3));
  for (double v : z) CHECK(v == 0.0);
  CHECK(shape.param_count() == 21 * 64 + 64 + 64 * 64 + 64 + 64 * 7 + 7);
}

TEST_CASE("batched forward matches a dense per-sample oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const MlpShape shape = random_shape(rng);
    const auto w = mlp_init(shape, rng, 0.5);
    const std::size_t batch = 1 + rng.below(9);
    std::vector<double> x(batch * shape.input());
    for (auto& v : x) v = rng.normal();
    const auto y = mlp_forward(shape, w, x, batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::vector<double> row(x.begin() + b * shape.input(), x.begin() + (b + 1) * shape.input());
      const auto ref = dense_oracle(shape, w, row);
      for (std::size_t o = 0; o < shape.output(); ++o) CHECK(std::abs(y[b * shape.output() + o] - ref[o]) < 1e-12);
    }
  }
  const auto shape = MlpShape::two_hidden(3, 2, 4);
  std::vector<double> w(shape.param_count() + 1);
  CHECK_THROWS_AS(mlp_forward(shape, w, std::vector<double>(3)), ContractViolation);
}

TEST_CASE("init respects the fan-in bounds and the output gain") {
  Rng rng(2);
  const auto shape = MlpShape::two_hidden(10, 3, 16);
  const auto w = mlp_init(shape, rng, 0.01);
  for (std::size_t l = 0; l < shape.layers(); ++l) {
    const double bound = (l == 2 ? 0.01 : 1.0) / std::sqrt(double(shape.sizes[l]));
    const std::size_t n = shape.sizes[l] * shape.sizes[l + 1];
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(w[shape.weight_offset(l) + i]) <= bound);
    for (std::size_t i = 0; i < shape.sizes[l + 1]; ++i) CHECK(w[shape.bias_offset(l) + i] == 0.0);
  }
}

TEST_CASE("analytic gradients match central finite differences on 100 random nets") {
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const MlpShape shape = random_shape(rng);
    auto w = mlp_init(shape, rng, 1.0);
    for (auto& v : w) v += 0.1 * rng.normal();  // nonzero biases too
    const std::size_t batch = 1 + rng.below(4);
    std::vector<double> x(batch * shape.input()), c(batch * shape.output());
    for (auto& v : x) v = rng.normal();
    for (auto& v : c) v = rng.normal();

    MlpCache cache;
    mlp_forward(shape, w, x, batch, cache);
    std::vector<double> gw(w.size(), 0.0), gx(x.size());
    mlp_backward(shape, w, cache, c, gw, gx);

    // Five-point stencil: truncation error O(h^4), so a coarse step keeps roundoff small.
    const double h = 1e-3;
    auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); };
    for (std::size_t i = 0; i < w.size(); ++i) {
      auto wp = w, wm = w, wp2 = w, wm2 = w;
      wp[i] += h;
      wm[i] -= h;
      wp2[i] += 2 * h;
      wm2[i] -= 2 * h;
      const double num = (8 * (weighted_output(shape, wp, x, batch, c) - weighted_output(shape, wm, x, batch, c)) -
                          (weighted_output(shape, wp2, x, batch, c) - weighted_output(shape, wm2, x, batch, c))) /
                         (12 * h);
      worst = std::max(worst, rel(gw[i], num));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto xp = x, xm = x, xp2 = x, xm2 = x;
      xp[i] += h;
      xm[i] -= h;
      xp2[i] += 2 * h;
      xm2[i] -= 2 * h;
      const double num = (8 * (weighted_output(shape, w, xp, batch, c) - weighted_output(shape, w, xm, batch, c)) -
                          (weighted_output(shape, w, xp2, batch, c) - weighted_output(shape, w, xm2, batch, c))) /
                         (12 * h);
      worst = std::max(worst, rel(gx[i], num));
    }
  }
  INFO("max relative error " << worst);
  CHECK(worst < 1e-6);
}

TEST_CASE("backward pass linearity") {
  Rng rng(9);
  const auto shape = MlpShape::two_hidden(5, 3, 8);
  const auto w = mlp_init(shape, rng);
  std::vector<double> x(5);
  for (auto& v : x) v = rng.normal();
  std::vector<double> gy(3);
  for (auto& v : gy) v = rng.normal();

  MlpCache one;
  mlp_forward(shape, w, x, 1, one);
  std::vector<double> g0(w.size(), 0.0);
  mlp_backward(shape, w, one, std::vector<double>(3, 0.0), g0);
  for (double v : g0) CHECK(v == 0.0);

  std::vector<double> g1(w.size(), 0.0), g2(w.size(), 0.0);
  mlp_backward(shape, w, one, gy, g1);
  std::vector<double> x2 = x;
  x2.insert(x2.end(), x.begin(), x.end());
  std::vector<double> gy2 = gy;
  gy2.insert(gy2.end(), gy.begin(), gy.end());
  MlpCache two;
  mlp_forward(shape, w, x2, 2, two);
  mlp_backward(shape, w, two, gy2, g2);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(g2[i] - 2 * g1[i]) <= 1e-12 * std::max(1.0, std::abs(g1[i])));
}

TEST_CASE("Gaussian log density") {
  const std::vector<double> zero{0.0}, one{1.0};
  CHECK(std::abs(gaussian_log_prob(zero, zero, zero) + 0.918938533204673) < 1e-12);
  CHECK(std::abs(gaussian_log_prob(zero, zero, one) + 1.418938533204673) < 1e-12);

  // Integrates to one: trapezoid quadrature of exp(log p) over +-10 sigma.
  const std::vector<double> mu{0.3}, ls{std::log(0.7)};
  double mass = 0.0;
  const double step = 1e-3;
  for (double a = 0.3 - 7.0; a <= 0.3 + 7.0; a += step) {
    const std::vector<double> av{a};
    mass += std::exp(gaussian_log_prob(mu, ls, av)) * step;
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));

  // Gradients against finite differences.
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> m(3), s(3), a(3), gm(3), gs(3);
    for (int i = 0; i < 3; ++i) {
      m[i] = rng.normal();
      s[i] = rng.uniform(-1.5, 1.0);
      a[i] = rng.normal();
    }
    gaussian_log_prob(m, s, a, gm, gs);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i) {
      auto mp = m, mm = m, sp = s, sm = s;
      mp[i] += h;
      mm[i] -= h;
      sp[i] += h;
      sm[i] -= h;
      CHECK(gm[i] == doctest::Approx((gaussian_log_prob(mp, s, a) - gaussian_log_prob(mm, s, a)) / (2 * h)).epsilon(1e-6));
      CHECK(gs[i] == doctest::Approx((gaussian_log_prob(m, sp, a) - gaussian_log_prob(m, sm, a)) / (2 * h)).epsilon(1e-6));
    }
  }

  // log_std is clamped to [-20, 2].
  const std::vector<double> huge{5.0}, cap{2.0};
  CHECK(gaussian_log_prob(zero, huge, one) == gaussian_log_prob(zero, cap, one));
  CHECK(gaussian_entropy(zero) == doctest::Approx(1.418938533204673));
}

TEST_CASE("squashing correction is stable and matches the direct formula") {
  for (double u : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
    const std::vector<double> v{u};
    const double t = std::tanh(u);
    CHECK(tanh_log_det(v) == doctest::Approx(std::log(1 - t * t)).epsilon(1e-12));
  }
  const std::vector<double> far{40.0};
  CHECK(std::isfinite(tanh_log_det(far)));
  CHECK(tanh_log_det(far) == doctest::Approx(2 * (std::log(2.0) - 40.0)).epsilon(1e-12));
}

TEST_CASE("Adam first step and clipping") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    AdamState st(3);
    std::vector<double> p{1, -2, 3};
    const std::vector<double> g(3, 0.0);
    adam_step(st, p, g, 1e-3);
    CHECK(p == std::vector<double>{1, -2, 3});
  }
  SUBCASE("unit gradient, lr 1e-3") {
    AdamState st(1);
    std::vector<double> p{0.0};
    adam_step(st, p, std::vector<double>{1.0}, 1e-3);
    CHECK(std::abs(p[0] - (-1e-3 / (1.0 + 1e-8))) < 1e-15);
    CHECK(std::abs(p[0] + 0.000999999) < 1e-9);
  }
  SUBCASE("global norm clipping scales the gradient before the moments") {
    AdamState st(2);
    std::vector<double> p{0, 0};
    const double norm = adam_step(st, p, std::vector<double>{3.0, 4.0}, 1e-3, 0.5);
    CHECK(norm == doctest::Approx(5.0));
    // m = (1 - beta1) * g * 0.5 / 5
    CHECK(st.m[0] == doctest::Approx(0.1 * 0.3).epsilon(1e-12));
    CHECK(st.m[1] == doctest::Approx(0.1 * 0.4).epsilon(1e-12));
    AdamState unclipped(2);
    adam_step(unclipped, p, std::vector<double>{0.3, 0.4}, 1e-3, 0.5);
    CHECK(unclipped.m[0] == doctest::Approx(0.03).epsilon(1e-12));
  }
  SUBCASE("size mismatch") {
    AdamState st(2);
    std::vector<double> p{0, 0};
    CHECK_THROWS_AS(adam_step(st, p, std::vector<double>{1.0}, 1e-3), ContractViolation);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  testing::TempDir dir("ckpt");
  Rng rng(12);
  const auto shape = MlpShape::two_hidden(15, 6);
  auto w = mlp_init(shape, rng);
  w[3] = -0.0;
  w[4] = std::nextafter(1.0, 2.0);
  w[5] = 1e-300;
  Checkpoint c;
  c.algorithm = "ppo";
  c.arm = "hook";
  c.obs_dim = 15;
  c.action_dim = 6;
  c.step = 42;
  append_mlp_arrays(c.arrays, "actor", shape, w);
  c.arrays.push_back({"log_std", {6}, std::vector<double>(6, -0.5)});
  save_checkpoint(c, dir / "c.json");
  const auto back = load_checkpoint(dir / "c.json");
  CHECK(back.step == 42);
  CHECK(back.algorithm == "ppo");
  std::vector<double> w2(w.size());
  read_mlp_arrays(back, "actor", shape, w2);
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(std::memcmp(&w[i], &w2[i], sizeof(double)) == 0);
  }
  CHECK(checkpoint_to_json(back) == checkpoint_to_json(c));
  CHECK(back.array("log_std").values == std::vector<double>(6, -0.5));
  CHECK_THROWS_AS(back.array("critic.W0"), SchemaError);

  std::vector<double> wrong(MlpShape::two_hidden(15, 5).param_count());
  CHECK_THROWS_AS(read_mlp_arrays(back, "actor", MlpShape::two_hidden(15, 5), wrong), SchemaError);

  auto text = checkpoint_to_json(c);
  text.replace(text.find("doorsim_checkpoint_v1"), 21, "doorsim_checkpoint_v0");
  CHECK_THROWS_AS(checkpoint_from_json(text), VersionError);
  CHECK_THROWS_AS(checkpoint_from_json("{"), SchemaError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), IoError);
}
