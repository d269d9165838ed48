#include "sfmnerf/field.hpp"

#include <algorithm>
#include <cmath>

#include "sfmnerf/error.hpp"

namespace sfmnerf {

Ray pixel_ray(const Vec2& p, const Intrinsics& cam, const Pose& pose, double t_near,
              double t_far) {
  const Vec3 dir_cam((p.x() - cam.cx) / cam.fx, (p.y() - cam.cy) / cam.fy, 1.0);
  Ray ray;
  ray.origin = pose.center();
  ray.direction = (pose.r.transpose() * dir_cam).normalized();
  ray.t_near = t_near;
  ray.t_far = t_far;
  return ray;
}

std::vector<double> stratified_samples(const Ray& ray, int n, Rng* rng) {
  if (n < 1) {
    throw ConfigError("stratified_samples: need at least one sample");
  }
  std::vector<double> t(static_cast<std::size_t>(n));
  const double step = (ray.t_far - ray.t_near) / n;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const double u = rng ? unit(*rng) : 0.5;
    t[static_cast<std::size_t>(i)] = ray.t_near + (i + u) * step;
  }
  return t;
}

std::vector<double> importance_samples(const Ray& ray, std::span<const double> t_vals,
                                       std::span<const double> weights, int n, Rng* rng) {
  if (t_vals.size() != weights.size() || t_vals.empty()) {
    throw ShapeMismatchError("importance_samples: t_vals and weights differ in length");
  }
  std::vector<double> out(t_vals.begin(), t_vals.end());
  if (n <= 0) {
    return out;
  }
  const std::size_t bins = t_vals.size();
  double total = 0.0;
  for (double w : weights) {
    total += std::max(w, 0.0);
  }
  if (!(total > 1e-12)) {
    const auto fallback = stratified_samples(ray, n, rng);
    out.insert(out.end(), fallback.begin(), fallback.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<double> edges(bins + 1);
  edges.front() = ray.t_near;
  edges.back() = ray.t_far;
  for (std::size_t k = 1; k < bins; ++k) {
    edges[k] = 0.5 * (t_vals[k - 1] + t_vals[k]);
  }
  std::vector<double> cdf(bins + 1, 0.0);
  for (std::size_t k = 0; k < bins; ++k) {
    cdf[k + 1] = cdf[k] + std::max(weights[k], 0.0) / total;
  }
  cdf.back() = 1.0;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const double u = rng ? unit(*rng) : (i + 0.5) / n;
    // First bin whose upper cdf exceeds u; empty bins are never selected.
    auto it = std::upper_bound(cdf.begin() + 1, cdf.end(), u);
    std::size_t k = static_cast<std::size_t>(std::distance(cdf.begin() + 1, it));
    k = std::min(k, bins - 1);
    while (cdf[k + 1] - cdf[k] <= 0.0 && k + 1 < bins) {
      ++k;
    }
    const double mass = cdf[k + 1] - cdf[k];
    const double frac = mass > 0.0 ? std::clamp((u - cdf[k]) / mass, 0.0, 1.0) : 0.5;
    out.push_back(edges[k] + frac * (edges[k + 1] - edges[k]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Matrix sample_deltas(const Matrix& t_vals, std::span<const Ray> rays) {
  if (static_cast<std::size_t>(t_vals.rows()) != rays.size()) {
    throw ShapeMismatchError("sample_deltas: one row of t_vals per ray expected");
  }
  const Eigen::Index s = t_vals.cols();
  Matrix deltas(t_vals.rows(), s);
  for (Eigen::Index r = 0; r < t_vals.rows(); ++r) {
    for (Eigen::Index j = 0; j + 1 < s; ++j) {
      deltas(r, j) = t_vals(r, j + 1) - t_vals(r, j);
    }
    deltas(r, s - 1) = std::max(rays[static_cast<std::size_t>(r)].t_far - t_vals(r, s - 1), 0.0);
  }
  return deltas;
}

namespace {

struct RayConstants {
  ad::Var origins;     // R x 3
  ad::Var directions;  // R x 3
};

RayConstants ray_constants(ad::Tape& tape, std::span<const Ray> rays) {
  Matrix o(static_cast<Eigen::Index>(rays.size()), 3);
  Matrix d(static_cast<Eigen::Index>(rays.size()), 3);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    o.row(static_cast<Eigen::Index>(i)) = rays[i].origin.transpose();
    d.row(static_cast<Eigen::Index>(i)) = rays[i].direction.transpose();
  }
  return {tape.constant(std::move(o)), tape.constant(std::move(d))};
}

}  // namespace

RenderResult composite(const RaySampleBatch& batch, std::span<const Ray> rays) {
  const Eigen::Index r = batch.t_vals.rows();
  const Eigen::Index s = batch.t_vals.cols();
  if (static_cast<std::size_t>(r) != rays.size() || batch.deltas.rows() != r ||
      batch.deltas.cols() != s || batch.sigmas.rows() != r || batch.sigmas.cols() != s ||
      batch.colors.rows() != r * s) {
    throw ShapeMismatchError("composite: inconsistent sample batch");
  }
  ad::Tape& tape = *batch.sigmas.tape();
  const ad::Var deltas = tape.constant(batch.deltas);
  const ad::Var t = tape.constant(batch.t_vals);

  const ad::Var optical = batch.sigmas * deltas;
  RenderResult out;
  out.transmittance = ad::exp(-ad::cumsum_exclusive(optical));
  const ad::Var alpha = -(ad::exp(-optical) - 1.0);
  out.weights = out.transmittance * alpha;
  out.color = ad::weighted_sample_sum(out.weights, batch.colors);
  out.weight_sum = ad::row_sum(out.weights);
  const ad::Var weighted_t = ad::row_sum(out.weights * t);
  out.depth = weighted_t / ad::clamp_min(out.weight_sum, 1e-10);
  const RayConstants rc = ray_constants(tape, rays);
  out.point = out.weight_sum * rc.origins + weighted_t * rc.directions;
  return out;
}

ad::Var expected_point(const RaySampleBatch& batch, std::span<const Ray> rays) {
  return composite(batch, rays).point;
}

namespace {

RenderResult evaluate_field(ad::Tape& tape, const MlpBinding& params, const MlpConfig& config,
                            std::span<const Ray> rays, const Matrix& t_vals,
                            const Matrix& dir_enc_per_ray) {
  const Eigen::Index r = t_vals.rows();
  const Eigen::Index s = t_vals.cols();
  Matrix positions(r * s, 3);
  Matrix dir_enc(r * s, dir_enc_per_ray.cols());
  for (Eigen::Index i = 0; i < r; ++i) {
    const Ray& ray = rays[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < s; ++j) {
      positions.row(i * s + j) = ray.at(t_vals(i, j)).transpose();
      dir_enc.row(i * s + j) = dir_enc_per_ray.row(i);
    }
  }
  const ad::Var x_enc = tape.constant(encode_batch(positions, config.position));
  const ad::Var d_enc = tape.constant(std::move(dir_enc));
  const FieldSample field = forward(params, config, x_enc, d_enc);
  RaySampleBatch batch{t_vals, sample_deltas(t_vals, rays), ad::reshape(field.sigma, r, s),
                       field.color};
  return composite(batch, rays);
}

}  // namespace

RenderOutputs render_rays(ad::Tape& tape, const MlpBinding& coarse, const MlpBinding& fine,
                          const MlpConfig& config, std::span<const Ray> rays,
                          const RenderSettings& settings, Rng* rng) {
  if (rays.empty()) {
    throw ShapeMismatchError("render_rays: no rays");
  }
  if (settings.n_coarse < 2) {
    throw ConfigError("render_rays: need at least two coarse samples");
  }
  Rng* jitter = settings.perturb ? rng : nullptr;
  const auto r = static_cast<Eigen::Index>(rays.size());

  Matrix directions(r, 3);
  Matrix coarse_t(r, settings.n_coarse);
  for (Eigen::Index i = 0; i < r; ++i) {
    const Ray& ray = rays[static_cast<std::size_t>(i)];
    directions.row(i) = ray.direction.transpose();
    const auto t = stratified_samples(ray, settings.n_coarse, jitter);
    coarse_t.row(i) = Eigen::Map<const Eigen::RowVectorXd>(t.data(), settings.n_coarse);
  }
  const Matrix dir_enc = encode_batch(directions, config.direction);

  RenderOutputs out;
  out.coarse = evaluate_field(tape, coarse, config, rays, coarse_t, dir_enc);
  if (settings.n_fine <= 0) {
    out.fine = out.coarse;
    out.fine_t_vals = coarse_t;
    return out;
  }
  const Matrix& w = out.coarse.weights.value();
  const int total = settings.n_coarse + settings.n_fine;
  out.fine_t_vals.resize(r, total);
  std::vector<double> t_row(static_cast<std::size_t>(settings.n_coarse));
  std::vector<double> w_row(static_cast<std::size_t>(settings.n_coarse));
  for (Eigen::Index i = 0; i < r; ++i) {
    for (int j = 0; j < settings.n_coarse; ++j) {
      t_row[static_cast<std::size_t>(j)] = coarse_t(i, j);
      w_row[static_cast<std::size_t>(j)] = w(i, j);
    }
    const auto merged = importance_samples(rays[static_cast<std::size_t>(i)], t_row, w_row,
                                           settings.n_fine, jitter);
    out.fine_t_vals.row(i) = Eigen::Map<const Eigen::RowVectorXd>(merged.data(), total);
  }
  out.fine = evaluate_field(tape, fine, config, rays, out.fine_t_vals, dir_enc);
  return out;
}

RenderValues render_values(const MlpWeights& coarse, const MlpWeights& fine,
                           std::span<const Ray> rays, const RenderSettings& settings,
                           std::size_t chunk) {
  const auto n = static_cast<Eigen::Index>(rays.size());
  RenderValues out{Matrix(n, 3), Matrix(n, 1), Matrix(n, 1), Matrix(n, 3)};
  Rng rng(0);
  for (std::size_t start = 0; start < rays.size(); start += chunk) {
    const std::size_t count = std::min(chunk, rays.size() - start);
    ad::Tape tape;
    const MlpBinding cb = bind(coarse, tape, false);
    const MlpBinding fb = bind(fine, tape, false);
    const auto res = render_rays(tape, cb, fb, coarse.config, rays.subspan(start, count),
                                 settings, &rng);
    const auto s = static_cast<Eigen::Index>(start);
    const auto c = static_cast<Eigen::Index>(count);
    out.color.middleRows(s, c) = res.fine.color.value();
    out.depth.middleRows(s, c) = res.fine.depth.value();
    out.weight_sum.middleRows(s, c) = res.fine.weight_sum.value();
    out.point.middleRows(s, c) = res.fine.point.value();
  }
  return out;
}

}  // namespace sfmnerf
