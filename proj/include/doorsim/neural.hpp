#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "doorsim/rng.hpp"

namespace doorsim {

/// Layer sizes of a dense tanh network: sizes = {in, hidden..., out}.
/// Hidden layers use tanh, the output layer is linear. Parameters live in a
/// flat array, layer by layer: W (out x in, row-major) then b (out).
struct MlpShape {
  std::vector<std::size_t> sizes;

  static MlpShape two_hidden(std::size_t in, std::size_t out, std::size_t hidden = 64) {
    return {{in, hidden, hidden, out}};
  }
  std::size_t layers() const { return sizes.size() - 1; }
  std::size_t input() const { return sizes.front(); }
  std::size_t output() const { return sizes.back(); }
  std::size_t param_count() const;
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const;
  bool operator==(const MlpShape&) const = default;
};

/// Standalone parameter block for one network.
struct MlpParams {
  MlpShape shape;
  std::vector<double> values;
};

/// Uniform(-g/sqrt(fan_in), g/sqrt(fan_in)) weights, zero biases; the output
/// layer uses output_gain instead of 1.
std::vector<double> mlp_init(const MlpShape& shape, Rng& rng, double output_gain = 1.0);

/// Activations retained by a batched forward pass.
struct MlpCache {
  std::size_t batch = 0;
  /// acts[0] is the input, acts[l] the output of layer l (post-tanh for hidden
  /// layers, linear for the last).
  std::vector<std::vector<double>> acts;
  std::vector<double> scratch;

  std::span<const double> output() const { return acts.back(); }
};

/// Batched forward: x is batch x input, row-major.
void mlp_forward(const MlpShape& shape, std::span<const double> w, std::span<const double> x,
                 std::size_t batch, MlpCache& cache);

/// Convenience single-call forward without keeping a cache around.
std::vector<double> mlp_forward(const MlpShape& shape, std::span<const double> w,
                                std::span<const double> x, std::size_t batch = 1);

/// Reverse pass. Adds parameter gradients into grad_w (must be zero-initialized
/// by the caller when a fresh gradient is wanted). When grad_x is non-empty it
/// receives dL/dx (batch x input), overwritten.
void mlp_backward(const MlpShape& shape, std::span<const double> w, const MlpCache& cache,
                  std::span<const double> grad_y, std::span<double> grad_w,
                  std::span<double> grad_x = {});

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

/// Diagonal Gaussian log density. When grads are requested they receive
/// d(log p)/d(mean) and d(log p)/d(log_std) (overwritten).
double gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std,
                         std::span<const double> a, std::span<double> grad_mean = {},
                         std::span<double> grad_log_std = {});

double gaussian_entropy(std::span<const double> log_std);

/// sum_i log(1 - tanh(u_i)^2), computed stably from pre-squash samples u.
double tanh_log_det(std::span<const double> pre_squash);

/// Log density of tanh(u) where u ~ N(mean, exp(log_std)): Gaussian term
/// minus the squashing correction.
double squashed_gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std,
                                  std::span<const double> pre_squash);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

double global_norm(std::span<const double> g);

/// Optional global-norm clipping (scale max_norm / norm when norm exceeds
/// max_norm), then one bias-corrected Adam update. Returns the pre-clip norm.
double adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
                 double lr, std::optional<double> max_grad_norm = std::nullopt);

/// A named float64 array stored in a checkpoint.
struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

/// Checkpoint: JSON header plus base64 little-endian float64 payloads.
struct Checkpoint {
  std::string algorithm;  // "ppo" | "sac"
  std::string arch = "mlp_tanh";
  std::int64_t step = 0;
  std::string arm;
  std::size_t obs_dim = 0;
  std::size_t action_dim = 0;
  std::size_t hidden = 64;
  std::vector<NamedArray> arrays;

  const NamedArray& array(std::string_view name) const;
};

inline constexpr std::string_view kCheckpointFormat = "doorsim_checkpoint_v1";

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(std::string_view text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Splits the flat parameters of one network into per-layer W/b arrays named
/// "<prefix>.W<l>" and "<prefix>.b<l>".
void append_mlp_arrays(std::vector<NamedArray>& out, const std::string& prefix,
                       const MlpShape& shape, std::span<const double> w);
/// Inverse of append_mlp_arrays; throws SchemaError on a shape mismatch.
void read_mlp_arrays(const Checkpoint& ckpt, const std::string& prefix, const MlpShape& shape,
                     std::span<double> w);

}  // namespace doorsim
