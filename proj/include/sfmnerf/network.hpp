#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfmnerf/autodiff.hpp"
#include "sfmnerf/image.hpp"
#include "sfmnerf/types.hpp"

namespace sfmnerf {

struct PositionalEncoding {
  int num_freqs = 10;
  bool include_input = true;

  int output_dim(int in_dim) const { return (include_input ? in_dim : 0) + in_dim * 2 * num_freqs; }
  bool operator==(const PositionalEncoding&) const = default;
};

// [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)],
// each block holding all components of x.
Eigen::VectorXd encode(const Vec3& x, const PositionalEncoding& enc);
// Row-wise encoding of an N x 3 batch.
Matrix encode_batch(const Matrix& points, const PositionalEncoding& enc);

enum class DensityActivation { kSoftplus, kRelu };

struct MlpConfig {
  int depth = 8;          // hidden layers in the density trunk
  int width = 256;
  int skip_layer = 5;     // hidden layer whose input re-appends the encoded position; <= 0 disables
  int color_width = 128;  // hidden width of the direction-conditioned color head
  PositionalEncoding position{10, true};
  PositionalEncoding direction{4, true};
  DensityActivation density_activation = DensityActivation::kSoftplus;

  bool operator==(const MlpConfig&) const = default;
  void validate() const;
};

struct DenseLayer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

// Layer order: trunk[0..depth), density head, feature layer, color hidden,
// color output.
struct MlpWeights {
  MlpConfig config;
  std::vector<DenseLayer> layers;

  std::size_t parameter_count() const;
  // Same shapes, all zero.
  MlpWeights zeros_like() const;
  void add_scaled(const MlpWeights& other, double s);
  double squared_norm() const;
  // Squared norm of a single layer (weight + bias).
  double layer_squared_norm(std::size_t i) const;
  bool all_finite() const;

  std::size_t density_layer() const { return static_cast<std::size_t>(config.depth); }
  std::size_t feature_layer() const { return density_layer() + 1; }
  std::size_t color_hidden_layer() const { return density_layer() + 2; }
  std::size_t color_output_layer() const { return density_layer() + 3; }
};

// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
MlpWeights init_mlp(const MlpConfig& config, Rng& rng);

// Parameters registered as differentiable leaves of a tape.
struct MlpBinding {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};

// Frozen bindings record constants, so nothing is kept for a backward pass.
MlpBinding bind(const MlpWeights& weights, ad::Tape& tape, bool trainable = true);

struct FieldSample {
  ad::Var color;  // N x 3, sigmoid
  ad::Var sigma;  // N x 1, nonnegative
};

// Evaluates the field on encoded positions/directions (N rows each).
FieldSample forward(const MlpBinding& params, const MlpConfig& config, const ad::Var& x_enc,
                    const ad::Var& d_enc);

// Adds the parameter adjoints held by `tape` into `grads`.
void accumulate_gradients(const MlpBinding& params, const ad::Tape& tape, MlpWeights& grads);

struct AdamState {
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<DenseLayer> first_moment;
  std::vector<DenseLayer> second_moment;
};

AdamState make_adam(const MlpWeights& weights, double lr = 1e-3);

// Bias-corrected Adam update. Weights and moments are stored at float32
// precision after the update so checkpoints reproduce the live state exactly.
void adam_step(MlpWeights& weights, const MlpWeights& grads, AdamState& state);

}  // namespace sfmnerf
