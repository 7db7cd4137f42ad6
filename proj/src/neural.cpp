#include "doorsim/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "doorsim/errors.hpp"
#include "doorsim/io.hpp"
#include "json.hpp"

namespace doorsim {

using nlohmann::json;

std::size_t MlpShape::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layers(); ++l) n += sizes[l + 1] * (sizes[l] + 1);
  return n;
}

std::size_t MlpShape::weight_offset(std::size_t layer) const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layer; ++l) n += sizes[l + 1] * (sizes[l] + 1);
  return n;
}

std::size_t MlpShape::bias_offset(std::size_t layer) const {
  return weight_offset(layer) + sizes[layer + 1] * sizes[layer];
}

std::vector<double> mlp_init(const MlpShape& shape, Rng& rng, double output_gain) {
  std::vector<double> w(shape.param_count(), 0.0);
  for (std::size_t l = 0; l < shape.layers(); ++l) {
    const std::size_t in = shape.sizes[l], out = shape.sizes[l + 1];
    const double gain = l + 1 == shape.layers() ? output_gain : 1.0;
    const double bound = gain / std::sqrt(static_cast<double>(in));
    const std::size_t off = shape.weight_offset(l);
    for (std::size_t i = 0; i < in * out; ++i) w[off + i] = rng.uniform(-bound, bound);
  }
  return w;
}

void mlp_forward(const MlpShape& shape, std::span<const double> w, std::span<const double> x,
                 std::size_t batch, MlpCache& cache) {
  if (w.size() != shape.param_count()) {
    throw ContractViolation("mlp_forward: expected " + std::to_string(shape.param_count()) +
                            " parameters, got " + std::to_string(w.size()));
  }
  if (x.size() != batch * shape.input()) {
    throw ContractViolation("mlp_forward: input has " + std::to_string(x.size()) +
                            " entries, expected batch x " + std::to_string(shape.input()));
  }
  const std::size_t layers = shape.layers();
  cache.batch = batch;
  cache.acts.resize(layers + 1);
  cache.acts[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = shape.sizes[l], out = shape.sizes[l + 1];
    const double* W = w.data() + shape.weight_offset(l);
    const double* b = w.data() + shape.bias_offset(l);
    // Transposed copy so the inner loop is a contiguous axpy.
    cache.scratch.resize(in * out);
    double* wt = cache.scratch.data();
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t k = 0; k < in; ++k) wt[k * out + o] = W[o * in + k];

    const std::vector<double>& xin = cache.acts[l];
    std::vector<double>& y = cache.acts[l + 1];
    y.resize(batch * out);
    const bool hidden = l + 1 < layers;
    // Rows go in blocks of four so each weight row is loaded once per block;
    // every output still accumulates over k in order.
    std::size_t r = 0;
    for (; r + 4 <= batch; r += 4) {
      double* y0 = y.data() + r * out;
      double* y1 = y0 + out;
      double* y2 = y1 + out;
      double* y3 = y2 + out;
      const double* x0 = xin.data() + r * in;
      for (double* yr : {y0, y1, y2, y3}) std::copy(b, b + out, yr);
      for (std::size_t k = 0; k < in; ++k) {
        const double a0 = x0[k], a1 = x0[in + k], a2 = x0[2 * in + k], a3 = x0[3 * in + k];
        const double* wk = wt + k * out;
        for (std::size_t o = 0; o < out; ++o) {
          y0[o] += a0 * wk[o];
          y1[o] += a1 * wk[o];
          y2[o] += a2 * wk[o];
          y3[o] += a3 * wk[o];
        }
      }
    }
    for (; r < batch; ++r) {
      double* yr = y.data() + r * out;
      const double* xr = xin.data() + r * in;
      std::copy(b, b + out, yr);
      for (std::size_t k = 0; k < in; ++k) {
        const double xk = xr[k];
        const double* wk = wt + k * out;
        for (std::size_t o = 0; o < out; ++o) yr[o] += xk * wk[o];
      }
    }
    if (hidden) {
      for (double& v : y) v = std::tanh(v);
    }
  }
}

std::vector<double> mlp_forward(const MlpShape& shape, std::span<const double> w,
                                std::span<const double> x, std::size_t batch) {
  MlpCache cache;
  mlp_forward(shape, w, x, batch, cache);
  return std::move(cache.acts.back());
}

void mlp_backward(const MlpShape& shape, std::span<const double> w, const MlpCache& cache,
                  std::span<const double> grad_y, std::span<double> grad_w,
                  std::span<double> grad_x) {
  const std::size_t layers = shape.layers();
  const std::size_t batch = cache.batch;
  if (cache.acts.size() != layers + 1) throw ContractViolation("mlp_backward: cache/shape mismatch");
  if (grad_y.size() != batch * shape.output()) throw ContractViolation("mlp_backward: bad grad_y size");
  if (grad_w.size() != shape.param_count()) throw ContractViolation("mlp_backward: bad grad_w size");
  if (!grad_x.empty() && grad_x.size() != batch * shape.input()) {
    throw ContractViolation("mlp_backward: bad grad_x size");
  }

  std::vector<double> delta(grad_y.begin(), grad_y.end());
  std::vector<double> prev;
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = shape.sizes[l], out = shape.sizes[l + 1];
    const double* W = w.data() + shape.weight_offset(l);
    double* dW = grad_w.data() + shape.weight_offset(l);
    double* db = grad_w.data() + shape.bias_offset(l);
    const std::vector<double>& xin = cache.acts[l];
    std::size_t r = 0;
    for (; r + 4 <= batch; r += 4) {
      const double* x0 = xin.data() + r * in;
      const double* x1 = x0 + in;
      const double* x2 = x1 + in;
      const double* x3 = x2 + in;
      const double* d0 = delta.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double e0 = d0[o], e1 = d0[out + o], e2 = d0[2 * out + o], e3 = d0[3 * out + o];
        db[o] = db[o] + e0 + e1 + e2 + e3;
        double* dwo = dW + o * in;
        for (std::size_t k = 0; k < in; ++k) {
          dwo[k] = dwo[k] + e0 * x0[k] + e1 * x1[k] + e2 * x2[k] + e3 * x3[k];
        }
      }
    }
    for (; r < batch; ++r) {
      const double* xr = xin.data() + r * in;
      const double* dr = delta.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dr[o];
        db[o] += d;
        double* dwo = dW + o * in;
        for (std::size_t k = 0; k < in; ++k) dwo[k] += d * xr[k];
      }
    }
    const bool need_input_grad = l > 0 || !grad_x.empty();
    if (!need_input_grad) break;
    prev.assign(batch * in, 0.0);
    r = 0;
    for (; r + 4 <= batch; r += 4) {
      double* p0 = prev.data() + r * in;
      double* p1 = p0 + in;
      double* p2 = p1 + in;
      double* p3 = p2 + in;
      const double* d0 = delta.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double e0 = d0[o], e1 = d0[out + o], e2 = d0[2 * out + o], e3 = d0[3 * out + o];
        const double* wo = W + o * in;
        for (std::size_t k = 0; k < in; ++k) {
          p0[k] += e0 * wo[k];
          p1[k] += e1 * wo[k];
          p2[k] += e2 * wo[k];
          p3[k] += e3 * wo[k];
        }
      }
    }
    for (; r < batch; ++r) {
      double* pr = prev.data() + r * in;
      const double* dr = delta.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dr[o];
        const double* wo = W + o * in;
        for (std::size_t k = 0; k < in; ++k) pr[k] += d * wo[k];
      }
    }
    if (l > 0) {
      // acts[l] is the tanh output feeding layer l.
      const std::vector<double>& a = cache.acts[l];
      for (std::size_t i = 0; i < prev.size(); ++i) prev[i] *= 1.0 - a[i] * a[i];
    } else {
      std::copy(prev.begin(), prev.end(), grad_x.begin());
    }
    delta.swap(prev);
  }
}

double gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std,
                         std::span<const double> a, std::span<double> grad_mean,
                         std::span<double> grad_log_std) {
  if (mean.size() != a.size() || log_std.size() != a.size()) {
    throw ContractViolation("gaussian_log_prob: dimension mismatch");
  }
  constexpr double kHalfLog2Pi = 0.91893853320467274178;
  double lp = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ls = std::clamp(log_std[i], kLogStdMin, kLogStdMax);
    const double inv_std = std::exp(-ls);
    const double z = (a[i] - mean[i]) * inv_std;
    lp += -0.5 * z * z - ls - kHalfLog2Pi;
    if (!grad_mean.empty()) grad_mean[i] = z * inv_std;
    if (!grad_log_std.empty()) {
      const bool inside = log_std[i] > kLogStdMin && log_std[i] < kLogStdMax;
      grad_log_std[i] = inside ? z * z - 1.0 : 0.0;
    }
  }
  return lp;
}

double gaussian_entropy(std::span<const double> log_std) {
  constexpr double kHalfLog2PiE = 1.41893853320467274178;
  double h = 0.0;
  for (double ls : log_std) h += kHalfLog2PiE + std::clamp(ls, kLogStdMin, kLogStdMax);
  return h;
}

double tanh_log_det(std::span<const double> u) {
  // log(1 - tanh(x)^2) = 2 (log 2 - x - softplus(-2x))
  double s = 0.0;
  for (double x : u) {
    const double m = -2.0 * x;
    const double softplus = m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
    s += 2.0 * (std::numbers::ln2 - x - softplus);
  }
  return s;
}

double squashed_gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std,
                                  std::span<const double> pre_squash) {
  return gaussian_log_prob(mean, log_std, pre_squash) - tanh_log_det(pre_squash);
}

double global_norm(std::span<const double> g) {
  double s = 0.0;
  for (double x : g) s += x * x;
  return std::sqrt(s);
}

double adam_step(AdamState& st, std::span<double> params, std::span<const double> grads,
                 double lr, std::optional<double> max_grad_norm) {
  if (params.size() != grads.size() || st.m.size() != params.size() ||
      st.v.size() != params.size()) {
    throw ContractViolation("adam_step: parameter/gradient/moment sizes differ");
  }
  const double norm = global_norm(grads);
  double clip = 1.0;
  if (max_grad_norm && norm > *max_grad_norm) clip = *max_grad_norm / norm;
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] * clip;
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
    const double m_hat = st.m[i] / bc1;
    const double v_hat = st.v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + st.eps);
  }
  return norm;
}

const NamedArray& Checkpoint::array(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw SchemaError(std::string(name), "array missing from checkpoint");
}

std::string checkpoint_to_json(const Checkpoint& c) {
  json arrays = json::array();
  for (const auto& a : c.arrays) {
    arrays.push_back({{"name", a.name},
                      {"shape", a.shape},
                      {"data", encode_doubles_base64(a.values)}});
  }
  const json j = {
      {"format", std::string(kCheckpointFormat)},
      {"arch", c.arch},
      {"algorithm", c.algorithm},
      {"step", c.step},
      {"arm", c.arm},
      {"sizes", {{"obs_dim", c.obs_dim}, {"action_dim", c.action_dim}, {"hidden", c.hidden}}},
      {"arrays", arrays},
  };
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("<checkpoint>", e.what());
  }
  Checkpoint c;
  try {
    const auto format = j.at("format").get<std::string>();
    if (format != kCheckpointFormat) {
      throw VersionError("checkpoint format '" + format + "' is not '" +
                         std::string(kCheckpointFormat) + "'");
    }
    c.arch = j.at("arch").get<std::string>();
    c.algorithm = j.at("algorithm").get<std::string>();
    c.step = j.at("step").get<std::int64_t>();
    c.arm = j.at("arm").get<std::string>();
    const auto& sizes = j.at("sizes");
    c.obs_dim = sizes.at("obs_dim").get<std::size_t>();
    c.action_dim = sizes.at("action_dim").get<std::size_t>();
    c.hidden = sizes.at("hidden").get<std::size_t>();
    for (const auto& a : j.at("arrays")) {
      NamedArray arr;
      arr.name = a.at("name").get<std::string>();
      arr.shape = a.at("shape").get<std::vector<std::size_t>>();
      arr.values = decode_doubles_base64(a.at("data").get<std::string>());
      std::size_t expected = 1;
      for (auto d : arr.shape) expected *= d;
      if (expected != arr.values.size()) throw SchemaError(arr.name, "payload does not match shape");
      c.arrays.push_back(std::move(arr));
    }
  } catch (const json::exception& e) {
    throw SchemaError("<checkpoint>", e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_text_file(path, checkpoint_to_json(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_text_file(path));
}

void append_mlp_arrays(std::vector<NamedArray>& out, const std::string& prefix,
                       const MlpShape& shape, std::span<const double> w) {
  for (std::size_t l = 0; l < shape.layers(); ++l) {
    const std::size_t in = shape.sizes[l], n_out = shape.sizes[l + 1];
    const auto wo = w.begin() + static_cast<std::ptrdiff_t>(shape.weight_offset(l));
    const auto bo = w.begin() + static_cast<std::ptrdiff_t>(shape.bias_offset(l));
    out.push_back({prefix + ".W" + std::to_string(l), {n_out, in},
                   std::vector<double>(wo, wo + static_cast<std::ptrdiff_t>(in * n_out))});
    out.push_back({prefix + ".b" + std::to_string(l), {n_out},
                   std::vector<double>(bo, bo + static_cast<std::ptrdiff_t>(n_out))});
  }
}

void read_mlp_arrays(const Checkpoint& ckpt, const std::string& prefix, const MlpShape& shape,
                     std::span<double> w) {
  if (w.size() != shape.param_count()) throw ContractViolation("read_mlp_arrays: bad target size");
  for (std::size_t l = 0; l < shape.layers(); ++l) {
    const std::size_t in = shape.sizes[l], out = shape.sizes[l + 1];
    const auto& W = ckpt.array(prefix + ".W" + std::to_string(l));
    const auto& b = ckpt.array(prefix + ".b" + std::to_string(l));
    if (W.shape != std::vector<std::size_t>{out, in} || b.shape != std::vector<std::size_t>{out}) {
      throw SchemaError(W.name, "layer shape does not match the expected architecture");
    }
    std::copy(W.values.begin(), W.values.end(), w.begin() + static_cast<std::ptrdiff_t>(shape.weight_offset(l)));
    std::copy(b.values.begin(), b.values.end(), w.begin() + static_cast<std::ptrdiff_t>(shape.bias_offset(l)));
  }
}

}  // namespace doorsim
