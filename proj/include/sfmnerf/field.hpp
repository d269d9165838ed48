#pragma once

#include <span>
#include <vector>

#include "sfmnerf/autodiff.hpp"
#include "sfmnerf/geometry.hpp"
#include "sfmnerf/network.hpp"

namespace sfmnerf {

// Unit-direction ray from the camera center through continuous pixel p.
Ray pixel_ray(const Vec2& p, const Intrinsics& cam, const Pose& pose, double t_near,
              double t_far);

// One draw per equal bin of [t_near, t_far]; bin centers when rng is null.
std::vector<double> stratified_samples(const Ray& ray, int n, Rng* rng);

// Inverse-CDF sampling of n depths from the piecewise-constant density whose
// bin k spans the midpoints around t_vals[k] (the ray bounds at the ends) and
// carries mass weights[k]. Returns the union with t_vals, sorted. Falls back
// to stratified draws when the weights sum to (nearly) zero. A null rng gives
// evenly spaced quantiles.
std::vector<double> importance_samples(const Ray& ray, std::span<const double> t_vals,
                                       std::span<const double> weights, int n, Rng* rng);

// Per-sample quantities for R rays with S samples each.
struct RaySampleBatch {
  Matrix t_vals;    // R x S, increasing along each row
  Matrix deltas;    // R x S, last entry t_far - t_S
  ad::Var sigmas;   // R x S
  ad::Var colors;   // (R*S) x 3, ray-major
};

Matrix sample_deltas(const Matrix& t_vals, std::span<const Ray> rays);

struct RenderResult {
  ad::Var color;          // R x 3
  ad::Var weight_sum;     // R x 1
  ad::Var depth;          // R x 1, sum(w t) / max(sum(w), eps)
  ad::Var point;          // R x 3, sum_j w_j (o + t_j d)
  ad::Var weights;        // R x S
  ad::Var transmittance;  // R x S
};

inline constexpr double kDegenerateWeightSum = 1e-6;

RenderResult composite(const RaySampleBatch& batch, std::span<const Ray> rays);

// Expected world point of each ray (R x 3); identical to composite().point.
ad::Var expected_point(const RaySampleBatch& batch, std::span<const Ray> rays);

// True when the accumulated opacity is too small for x_s to carry geometry.
inline bool is_degenerate(double weight_sum) { return weight_sum < kDegenerateWeightSum; }

struct RenderSettings {
  int n_coarse = 64;
  int n_fine = 64;
  bool perturb = true;  // stratified jitter and random importance draws
};

struct RenderOutputs {
  RenderResult coarse;
  RenderResult fine;  // same as coarse when n_fine == 0
  Matrix fine_t_vals;
};

// Evaluates the field along every ray: coarse pass, importance resampling,
// fine pass over the merged samples.
RenderOutputs render_rays(ad::Tape& tape, const MlpBinding& coarse, const MlpBinding& fine,
                          const MlpConfig& config, std::span<const Ray> rays,
                          const RenderSettings& settings, Rng* rng);

// Runs the field with the given weights on one ray batch without keeping a
// tape around. Values only.
struct RenderValues {
  Matrix color;       // R x 3
  Matrix depth;       // R x 1
  Matrix weight_sum;  // R x 1
  Matrix point;       // R x 3
};
RenderValues render_values(const MlpWeights& coarse, const MlpWeights& fine,
                           std::span<const Ray> rays, const RenderSettings& settings,
                           std::size_t chunk = 1024);

}  // namespace sfmnerf
