#include <gtest/gtest.h>

#include <cmath>

#include "sfmnerf/error.hpp"
#include "sfmnerf/field.hpp"
#include "sfmnerf/geometry.hpp"
#include "test_support.hpp"

using namespace sfmnerf;
using sfmnerf::testing::random_pose;

namespace {

Ray axis_ray(double t_near, double t_far) {
  Ray r;
  r.t_near = t_near;
  r.t_far = t_far;
  return r;
}

struct Composited {
  Matrix color;
  double weight_sum;
  double depth;
  Matrix point;
  Matrix weights;
  Matrix transmittance;
};

// Composites one ray with explicit sample depths, densities and colors.
Composited composite_values(const Ray& ray, const std::vector<double>& t,
                            const std::vector<double>& sigma, const Matrix& colors) {
  const auto s = static_cast<Eigen::Index>(t.size());
  Matrix t_vals(1, s), sig(1, s);
  for (Eigen::Index j = 0; j < s; ++j) {
    t_vals(0, j) = t[static_cast<std::size_t>(j)];
    sig(0, j) = sigma[static_cast<std::size_t>(j)];
  }
  const std::vector<Ray> rays = {ray};
  ad::Tape tape;
  RaySampleBatch batch{t_vals, sample_deltas(t_vals, rays), tape.constant(sig),
                       tape.constant(colors)};
  const RenderResult r = composite(batch, rays);
  return {r.color.value(), r.weight_sum.scalar(), r.depth.scalar(), r.point.value(),
          r.weights.value(), r.transmittance.value()};
}

double homogeneous_error(int n, double sigma, double c) {
  const Ray ray = axis_ray(0.0, 2.0);
  const auto t = stratified_samples(ray, n, nullptr);
  const auto res = composite_values(ray, t, std::vector<double>(t.size(), sigma),
                                    Matrix::Constant(n, 3, c));
  return std::abs(res.color(0, 0) - c * (1.0 - std::exp(-sigma * 2.0)));
}

}  // namespace

TEST(PixelRay, PrincipalPointLooksDownTheAxis) {
  const Intrinsics cam{80.0, 80.0, 31.5, 31.5, 64, 64};
  const Ray r = pixel_ray(Vec2(31.5, 31.5), cam, Pose::identity(), 2.0, 6.0);
  EXPECT_LT((r.direction - Vec3::UnitZ()).norm(), 1e-15);
  EXPECT_EQ(r.origin, Vec3::Zero());
  EXPECT_EQ(r.t_near, 2.0);
  EXPECT_EQ(r.t_far, 6.0);
}

TEST(PixelRay, UnitDirectionAndProjectionRoundTrip) {
  Rng rng(1);
  const Intrinsics cam{90.0, 85.0, 40.0, 30.0, 81, 61};
  std::uniform_real_distribution<double> ux(0.0, 80.0), uy(0.0, 60.0);
  for (int k = 0; k < 1000; ++k) {
    const Pose pose = random_pose(rng);
    const Vec2 p(ux(rng), uy(rng));
    const Ray r = pixel_ray(p, cam, pose, 1.0, 5.0);
    EXPECT_NEAR(r.direction.norm(), 1.0, 1e-14);
    EXPECT_LT((r.origin - pose.center()).norm(), 1e-12);
    EXPECT_LT((project(r.at(5.0), cam, pose) - p).norm(), 1e-6);
  }
}

TEST(Stratified, TwoSamplesFallInTheirBins) {
  Rng rng(2);
  const Ray ray = axis_ray(0.0, 1.0);
  for (int k = 0; k < 1000; ++k) {
    const auto t = stratified_samples(ray, 2, &rng);
    ASSERT_EQ(t.size(), 2u);
    EXPECT_GE(t[0], 0.0);
    EXPECT_LT(t[0], 0.5);
    EXPECT_GE(t[1], 0.5);
    EXPECT_LT(t[1], 1.0);
  }
}

TEST(Stratified, BinMeansAreCenters) {
  Rng rng(3);
  const Ray ray = axis_ray(2.0, 6.0);
  const int n = 8;
  std::vector<double> sums(n, 0.0);
  for (int k = 0; k < 10000; ++k) {
    const auto t = stratified_samples(ray, n, &rng);
    for (int j = 0; j < n; ++j) sums[j] += t[j];
  }
  for (int j = 0; j < n; ++j) {
    const double center = 2.0 + (j + 0.5) * 0.5;
    EXPECT_NEAR(sums[j] / 10000.0, center, 0.02 * center);
  }
}

TEST(Stratified, DeterministicUnderSeed) {
  const Ray ray = axis_ray(0.0, 3.0);
  Rng a(4), b(4);
  EXPECT_EQ(stratified_samples(ray, 16, &a), stratified_samples(ray, 16, &b));
}

TEST(Stratified, NullRngGivesBinCenters) {
  const auto t = stratified_samples(axis_ray(0.0, 1.0), 4, nullptr);
  EXPECT_EQ(t, (std::vector<double>{0.125, 0.375, 0.625, 0.875}));
}

TEST(Importance, AllWeightInOneBin) {
  Rng rng(5);
  const Ray ray = axis_ray(0.0, 4.0);
  const auto coarse = stratified_samples(ray, 8, nullptr);
  std::vector<double> w(8, 0.0);
  w[5] = 1.0;
  const auto fine = importance_samples(ray, coarse, w, 64, &rng);
  ASSERT_EQ(fine.size(), 72u);
  EXPECT_TRUE(std::is_sorted(fine.begin(), fine.end()));
  int inside = 0;
  for (double t : fine) {
    inside += t >= 2.5 && t <= 3.0;
  }
  // 64 fine draws plus the coarse sample at the bin center.
  EXPECT_EQ(inside, 65);
}

TEST(Importance, UniformWeightsGiveUniformHistogram) {
  Rng rng(6);
  const Ray ray = axis_ray(0.0, 1.0);
  const auto coarse = stratified_samples(ray, 10, nullptr);
  std::vector<double> w(10, 1.0);
  std::vector<double> edges = {0.0};
  for (int k = 1; k < 10; ++k) edges.push_back(0.5 * (coarse[k - 1] + coarse[k]));
  edges.push_back(1.0);
  std::vector<int> hist(10, 0);
  const int draws = 100000;
  int drawn = 0;
  while (drawn < draws) {
    const auto t = importance_samples(ray, coarse, w, 1000, &rng);
    std::vector<double> fine;
    std::set_difference(t.begin(), t.end(), coarse.begin(), coarse.end(),
                        std::back_inserter(fine));
    for (double v : fine) {
      const auto k = std::upper_bound(edges.begin(), edges.end(), v) - edges.begin() - 1;
      ++hist[std::min<std::size_t>(static_cast<std::size_t>(k), 9)];
    }
    drawn += 1000;
  }
  for (int k = 0; k < 10; ++k) {
    EXPECT_NEAR(hist[k] / static_cast<double>(draws), 0.1, 0.005) << "bin " << k;
  }
}

TEST(Importance, ZeroWeightsFallBackToStratified) {
  Rng rng(7);
  const Ray ray = axis_ray(1.0, 2.0);
  const auto coarse = stratified_samples(ray, 4, nullptr);
  const auto out = importance_samples(ray, coarse, std::vector<double>(4, 0.0), 4, &rng);
  ASSERT_EQ(out.size(), 8u);
  EXPECT_TRUE(std::is_sorted(out.begin(), out.end()));
  EXPECT_GE(out.front(), 1.0);
  EXPECT_LE(out.back(), 2.0);
}

TEST(Composite, EmptySpace) {
  const Ray ray = axis_ray(0.0, 1.0);
  const auto t = stratified_samples(ray, 16, nullptr);
  const auto res = composite_values(ray, t, std::vector<double>(16, 0.0), Matrix::Ones(16, 3));
  EXPECT_TRUE(res.color.isZero(0.0));
  EXPECT_EQ(res.weight_sum, 0.0);
  EXPECT_TRUE(is_degenerate(res.weight_sum));
}

TEST(Composite, HomogeneousMediumAt1024Samples) {
  EXPECT_LT(homogeneous_error(1024, 1.0, 0.7), 1e-3);
}

TEST(Composite, QuadratureErrorShrinksWithSamples) {
  double prev = homogeneous_error(64, 1.0, 0.7);
  for (int n : {128, 256, 512, 1024}) {
    const double e = homogeneous_error(n, 1.0, 0.7);
    EXPECT_LT(e, prev) << n;
    prev = e;
  }
}

TEST(Composite, OpaqueFirstSample) {
  const Ray ray = axis_ray(0.0, 4.0);
  const std::vector<double> t = {1.0, 2.0, 3.0};
  Matrix colors(3, 3);
  colors << 0.2, 0.4, 0.6, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1;
  const auto res = composite_values(ray, t, {20.0, 5.0, 5.0}, colors);
  EXPECT_LT((res.color.row(0) - colors.row(0)).norm(), 1e-6);
  EXPECT_NEAR(res.depth, 1.0, 1e-6);
}

TEST(Composite, OpaqueSampleGivesExpectedPoint) {
  const Ray ray = axis_ray(0.0, 4.0);
  const auto res = composite_values(ray, {3.0, 3.5}, {40.0, 0.0}, Matrix::Ones(2, 3));
  EXPECT_LT((res.point.row(0).transpose() - Vec3(0.0, 0.0, 3.0)).norm(), 1e-7);
}

TEST(Composite, PointIsOriginPlusScaledDepth) {
  Rng rng(8);
  std::uniform_real_distribution<double> s(0.0, 3.0);
  for (int k = 0; k < 100; ++k) {
    Ray ray;
    ray.origin = Vec3(s(rng), s(rng), s(rng));
    ray.direction = Vec3(s(rng) - 1.5, s(rng) - 1.5, 1.0).normalized();
    ray.t_near = 1.0;
    ray.t_far = 4.0;
    Rng draw(k);
    const auto t = stratified_samples(ray, 12, &draw);
    std::vector<double> sig(12);
    for (double& v : sig) v = s(rng);
    const auto res = composite_values(ray, t, sig, Matrix::Ones(12, 3));
    const Vec3 expected = res.weight_sum * (ray.origin + res.depth * ray.direction);
    EXPECT_LT((res.point.row(0).transpose() - expected).norm(), 1e-12);
    EXPECT_GE(res.depth, ray.t_near);
    EXPECT_LE(res.depth, ray.t_far);
  }
}

TEST(Composite, InconsistentShapesThrow) {
  const std::vector<Ray> rays = {axis_ray(0.0, 1.0)};
  ad::Tape tape;
  RaySampleBatch batch{Matrix::Zero(1, 4), Matrix::Zero(1, 4), tape.constant(Matrix::Zero(1, 3)),
                       tape.constant(Matrix::Zero(4, 3))};
  EXPECT_THROW(composite(batch, rays), ShapeMismatchError);
}

TEST(CompositeProperty, TransmittanceAndWeightInvariants) {
  Rng rng(9);
  std::uniform_int_distribution<int> count(2, 64);
  std::exponential_distribution<double> density(0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < 10000; ++k) {
    const Ray ray = axis_ray(unit(rng), 2.0 + 4.0 * unit(rng));
    const int n = count(rng);
    const auto t = stratified_samples(ray, n, &rng);
    std::vector<double> sig(static_cast<std::size_t>(n));
    for (double& v : sig) v = unit(rng) < 0.3 ? 0.0 : density(rng);
    Matrix colors(n, 3);
    for (Eigen::Index i = 0; i < colors.size(); ++i) colors.data()[i] = unit(rng);
    const auto res = composite_values(ray, t, sig, colors);
    ASSERT_EQ(res.transmittance(0, 0), 1.0);
    for (int j = 1; j < n; ++j) {
      ASSERT_LE(res.transmittance(0, j), res.transmittance(0, j - 1));
    }
    ASSERT_GE(res.weights.minCoeff(), 0.0);
    ASSERT_LE(res.weight_sum, 1.0 + 1e-6);
    ASSERT_GE(res.color.minCoeff(), 0.0);
    ASSERT_LE(res.color.maxCoeff(), 1.0);
  }
}

TEST(CompositeProperty, ZeroDensityInsertionIsInvisible) {
  Rng rng(10);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = 8;
  for (int k = 0; k < 10000; ++k) {
    const Ray ray = axis_ray(1.0, 5.0);
    const auto t = stratified_samples(ray, n, &rng);
    std::vector<double> sig(n);
    for (double& v : sig) v = 3.0 * unit(rng);
    const int j = static_cast<int>(unit(rng) * n);
    sig[j] = 0.0;
    Matrix colors(n, 3);
    for (Eigen::Index i = 0; i < colors.size(); ++i) colors.data()[i] = unit(rng);
    const auto base = composite_values(ray, t, sig, colors);

    // New sample inside the empty interval that follows sample j.
    const double hi = j + 1 < n ? t[j + 1] : ray.t_far;
    const double t_new = t[j] + (0.05 + 0.9 * unit(rng)) * (hi - t[j]);
    std::vector<double> t2 = t, sig2 = sig;
    t2.insert(t2.begin() + j + 1, t_new);
    sig2.insert(sig2.begin() + j + 1, 0.0);
    Matrix colors2(n + 1, 3);
    colors2.topRows(j + 1) = colors.topRows(j + 1);
    colors2.row(j + 1) << unit(rng), unit(rng), unit(rng);
    colors2.bottomRows(n - j - 1) = colors.bottomRows(n - j - 1);
    const auto inserted = composite_values(ray, t2, sig2, colors2);
    ASSERT_LT((inserted.color - base.color).norm(), 1e-9);
    ASSERT_NEAR(inserted.weight_sum, base.weight_sum, 1e-9);
    ASSERT_NEAR(inserted.depth, base.depth, 1e-9);
  }
}

TEST(CompositeGradients, ColorMatchesFiniteDifferences) {
  Rng rng(11);
  const std::vector<Ray> rays = {axis_ray(1.0, 3.0), axis_ray(0.5, 2.5)};
  Matrix t_vals(2, 6);
  for (int r = 0; r < 2; ++r) {
    const auto t = stratified_samples(rays[r], 6, &rng);
    for (int j = 0; j < 6; ++j) t_vals(r, j) = t[j];
  }
  const Matrix deltas = sample_deltas(t_vals, rays);
  std::uniform_real_distribution<double> unit(0.1, 2.0);
  Matrix sig(2, 6), col(12, 3);
  for (Eigen::Index i = 0; i < sig.size(); ++i) sig.data()[i] = unit(rng);
  for (Eigen::Index i = 0; i < col.size(); ++i) col.data()[i] = unit(rng) / 2.0;
  const auto res = sfmnerf::testing::check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& v) {
        RaySampleBatch batch{t_vals, deltas, v[0], v[1]};
        const RenderResult r = composite(batch, rays);
        return ad::sum(ad::square(r.color)) + ad::sum(r.depth) + ad::sum(ad::square(r.point));
      },
      {sig, col}, 1e-6);
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(RenderRays, ShapesAndHierarchy) {
  Rng rng(12);
  MlpConfig cfg;
  cfg.depth = 2;
  cfg.width = 16;
  cfg.skip_layer = 0;
  cfg.color_width = 8;
  cfg.position = {4, true};
  cfg.direction = {2, true};
  const MlpWeights coarse = init_mlp(cfg, rng);
  const MlpWeights fine = init_mlp(cfg, rng);
  const Intrinsics cam{50.0, 50.0, 15.5, 15.5, 32, 32};
  std::vector<Ray> rays;
  for (int k = 0; k < 5; ++k) rays.push_back(pixel_ray(Vec2(3.0 * k, 7.0), cam, Pose{}, 2.0, 6.0));
  ad::Tape tape;
  const auto out = render_rays(tape, bind(coarse, tape), bind(fine, tape), cfg, rays,
                               {16, 8, true}, &rng);
  EXPECT_EQ(out.coarse.color.rows(), 5);
  EXPECT_EQ(out.fine.weights.cols(), 24);
  EXPECT_EQ(out.fine_t_vals.cols(), 24);
  for (Eigen::Index r = 0; r < 5; ++r) {
    for (Eigen::Index j = 1; j < 24; ++j) {
      EXPECT_LE(out.fine_t_vals(r, j - 1), out.fine_t_vals(r, j));
    }
    EXPECT_GE(out.fine_t_vals(r, 0), 2.0);
    EXPECT_LE(out.fine_t_vals(r, 23), 6.0);
  }
  const RenderValues vals = render_values(coarse, fine, rays, {16, 8, false}, 2);
  EXPECT_EQ(vals.color.rows(), 5);
  EXPECT_TRUE(vals.color.allFinite());
}
