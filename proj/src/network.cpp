#include "sfmnerf/network.hpp"

#include <cmath>
#include <numbers>

#include "sfmnerf/error.hpp"

namespace sfmnerf {

namespace {

double to_float_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

void check_same_shapes(const std::vector<DenseLayer>& a, const std::vector<DenseLayer>& b,
                       const char* what) {
  if (a.size() != b.size()) {
    throw ShapeMismatchError(std::string(what) + ": layer counts differ");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].weight.rows() != b[i].weight.rows() || a[i].weight.cols() != b[i].weight.cols() ||
        a[i].bias.cols() != b[i].bias.cols()) {
      throw ShapeMismatchError(std::string(what) + ": layer " + std::to_string(i) +
                               " shapes differ");
    }
  }
}

}  // namespace

Eigen::VectorXd encode(const Vec3& x, const PositionalEncoding& enc) {
  Matrix batch(1, 3);
  batch.row(0) = x.transpose();
  return encode_batch(batch, enc).row(0).transpose();
}

Matrix encode_batch(const Matrix& points, const PositionalEncoding& enc) {
  const Eigen::Index in_dim = points.cols();
  Matrix out(points.rows(), enc.output_dim(static_cast<int>(in_dim)));
  Eigen::Index col = 0;
  if (enc.include_input) {
    out.leftCols(in_dim) = points;
    col = in_dim;
  }
  if (enc.num_freqs == 0) {
    return out;
  }
  // Higher octaves by the double-angle identities; the error after L
  // doublings stays near 2^L ulp.
  Matrix s = (points * std::numbers::pi).array().sin().matrix();
  Matrix c = (points * std::numbers::pi).array().cos().matrix();
  for (int l = 0; l < enc.num_freqs; ++l) {
    if (l > 0) {
      Matrix s2 = 2.0 * s.cwiseProduct(c);
      c = (c.array() - s.array()) * (c.array() + s.array());
      s = std::move(s2);
    }
    out.middleCols(col, in_dim) = s;
    out.middleCols(col + in_dim, in_dim) = c;
    col += 2 * in_dim;
  }
  return out;
}

void MlpConfig::validate() const {
  if (depth < 1 || width < 1 || color_width < 1) {
    throw ConfigError("mlp: depth, width and color width must be positive");
  }
  if (position.num_freqs < 0 || direction.num_freqs < 0) {
    throw ConfigError("mlp: negative frequency count");
  }
}

std::size_t MlpWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) {
    n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  }
  return n;
}

MlpWeights MlpWeights::zeros_like() const {
  MlpWeights z;
  z.config = config;
  z.layers.reserve(layers.size());
  for (const auto& l : layers) {
    z.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()),
                        Matrix::Zero(1, l.bias.cols())});
  }
  return z;
}

void MlpWeights::add_scaled(const MlpWeights& other, double s) {
  check_same_shapes(layers, other.layers, "add_scaled");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += s * other.layers[i].weight;
    layers[i].bias += s * other.layers[i].bias;
  }
}

double MlpWeights::layer_squared_norm(std::size_t i) const {
  return layers[i].weight.squaredNorm() + layers[i].bias.squaredNorm();
}

double MlpWeights::squared_norm() const {
  double s = 0.0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    s += layer_squared_norm(i);
  }
  return s;
}

bool MlpWeights::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      return false;
    }
  }
  return true;
}

MlpWeights init_mlp(const MlpConfig& config, Rng& rng) {
  config.validate();
  const int pos_dim = config.position.output_dim(3);
  const int dir_dim = config.direction.output_dim(3);
  MlpWeights w;
  w.config = config;
  auto add_layer = [&](int in, int out) {
    const double bound = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer{Matrix(in, out), Matrix::Zero(1, out)};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight.data()[i] = to_float_precision(dist(rng));
    }
    w.layers.push_back(std::move(layer));
  };
  for (int k = 0; k < config.depth; ++k) {
    int in = k == 0 ? pos_dim : config.width;
    if (k > 0 && k == config.skip_layer) {
      in += pos_dim;
    }
    add_layer(in, config.width);
  }
  add_layer(config.width, 1);                          // density
  add_layer(config.width, config.width);               // feature
  add_layer(config.width + dir_dim, config.color_width);
  add_layer(config.color_width, 3);
  return w;
}

MlpBinding bind(const MlpWeights& weights, ad::Tape& tape, bool trainable) {
  MlpBinding b;
  for (const auto& l : weights.layers) {
    b.weights.push_back(trainable ? tape.variable(l.weight) : tape.constant(l.weight));
    b.biases.push_back(trainable ? tape.variable(l.bias) : tape.constant(l.bias));
  }
  return b;
}

FieldSample forward(const MlpBinding& params, const MlpConfig& config, const ad::Var& x_enc,
                    const ad::Var& d_enc) {
  const auto expected_layers = static_cast<std::size_t>(config.depth) + 4;
  if (params.weights.size() != expected_layers) {
    throw ShapeMismatchError("forward: weights do not match the configuration");
  }
  if (x_enc.cols() != params.weights[0].rows()) {
    throw ShapeMismatchError("forward: encoded position has " + std::to_string(x_enc.cols()) +
                             " columns, expected " + std::to_string(params.weights[0].rows()));
  }
  const auto dir_dim = config.direction.output_dim(3);
  if (d_enc.cols() != dir_dim || d_enc.rows() != x_enc.rows()) {
    throw ShapeMismatchError("forward: encoded direction has the wrong shape");
  }
  ad::Var h = x_enc;
  for (int k = 0; k < config.depth; ++k) {
    if (k > 0 && k == config.skip_layer) {
      h = ad::concat_cols(h, x_enc);
    }
    h = ad::relu(ad::affine(h, params.weights[k], params.biases[k]));
  }
  const std::size_t d = static_cast<std::size_t>(config.depth);
  ad::Var sigma_logit = ad::affine(h, params.weights[d], params.biases[d]);
  ad::Var sigma = config.density_activation == DensityActivation::kSoftplus
                      ? ad::softplus(sigma_logit)
                      : ad::relu(sigma_logit);
  ad::Var feature = ad::affine(h, params.weights[d + 1], params.biases[d + 1]);
  ad::Var c = ad::relu(
      ad::affine(ad::concat_cols(feature, d_enc), params.weights[d + 2], params.biases[d + 2]));
  ad::Var color = ad::sigmoid(ad::affine(c, params.weights[d + 3], params.biases[d + 3]));
  return {color, sigma};
}

void accumulate_gradients(const MlpBinding& params, const ad::Tape& tape, MlpWeights& grads) {
  if (grads.layers.size() != params.weights.size()) {
    throw ShapeMismatchError("accumulate_gradients: layer count mismatch");
  }
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    grads.layers[i].weight += tape.grad(params.weights[i]);
    grads.layers[i].bias += tape.grad(params.biases[i]);
  }
}

AdamState make_adam(const MlpWeights& weights, double lr) {
  AdamState s;
  s.lr = lr;
  const MlpWeights z = weights.zeros_like();
  s.first_moment = z.layers;
  s.second_moment = z.layers;
  return s;
}

void adam_step(MlpWeights& weights, const MlpWeights& grads, AdamState& state) {
  check_same_shapes(weights.layers, grads.layers, "adam_step");
  check_same_shapes(weights.layers, state.first_moment, "adam_step");
  check_same_shapes(weights.layers, state.second_moment, "adam_step");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto update = [&](Matrix& w, const Matrix& g, Matrix& m, Matrix& v) {
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double gi = g.data()[i];
      const double mi = to_float_precision(state.beta1 * m.data()[i] + (1.0 - state.beta1) * gi);
      const double vi =
          to_float_precision(state.beta2 * v.data()[i] + (1.0 - state.beta2) * gi * gi);
      m.data()[i] = mi;
      v.data()[i] = vi;
      const double step = state.lr * (mi / c1) / (std::sqrt(vi / c2) + state.epsilon);
      w.data()[i] = to_float_precision(w.data()[i] - step);
    }
  };
  for (std::size_t l = 0; l < weights.layers.size(); ++l) {
    update(weights.layers[l].weight, grads.layers[l].weight, state.first_moment[l].weight,
           state.second_moment[l].weight);
    update(weights.layers[l].bias, grads.layers[l].bias, state.first_moment[l].bias,
           state.second_moment[l].bias);
  }
}

}  // namespace sfmnerf
