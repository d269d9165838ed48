#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>

#include "sfmnerf/dataset.hpp"
#include "sfmnerf/error.hpp"
#include "sfmnerf/field.hpp"
#include "sfmnerf/losses.hpp"
#include "sfmnerf/scene.hpp"
#include "test_support.hpp"

using namespace sfmnerf;
namespace fs = std::filesystem;

namespace {

Intrinsics small_camera() { return {60.0, 60.0, 23.5, 23.5, 48, 48}; }

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sfmnerf_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double residual(const Mat3& f, const Vec2& a, const Vec2& b) {
  return std::abs(Vec3(b.x(), b.y(), 1.0).dot(f * Vec3(a.x(), a.y(), 1.0)));
}

// Two-view fundamental matrix between dataset cameras a -> b.
Mat3 pair_fundamental(const SceneCamera& a, const SceneCamera& b) {
  return fundamental_matrix(a.intrinsics, b.intrinsics,
                            relative_pose_from_global(a.pose, b.pose));
}

SceneDataset tiny_dataset(int n) {
  SceneDataset ds;
  for (int k = 0; k < n; ++k) {
    char name[16];
    std::snprintf(name, sizeof(name), "%03d.png", k);
    ds.names.push_back(name);
    ds.images.emplace_back(8, 8, 3, 0.5);
    ds.cameras.push_back({{10.0, 10.0, 3.5, 3.5, 8, 8},
                          look_at(Vec3(std::cos(0.1 * k) * 4, 0.0, std::sin(0.1 * k) * 4),
                                  Vec3::Zero())});
  }
  assign_split(ds);
  return ds;
}

}  // namespace

TEST(Split, FortyImagesHoldOutFive) {
  const SceneDataset ds = tiny_dataset(40);
  EXPECT_EQ(ds.train.size(), 35u);
  EXPECT_EQ(ds.test, (std::vector<int>{7, 15, 23, 31, 39}));
}

TEST(Split, EightImagesHoldOutOne) {
  const SceneDataset ds = tiny_dataset(8);
  EXPECT_EQ(ds.train.size(), 7u);
  EXPECT_EQ(ds.test, std::vector<int>{7});
}

TEST(Split, TwoSpheresPresetIsEightPlusOne) {
  const SyntheticScene scene = make_preset("two-spheres");
  ASSERT_EQ(scene.cameras.size(), 9u);
  SceneDataset ds = tiny_dataset(9);
  EXPECT_EQ(ds.train.size(), 8u);
  EXPECT_EQ(ds.test.size(), 1u);
}

TEST(Matches, EmptyFileGivesNoSets) {
  const fs::path dir = fresh_dir("empty_matches");
  std::ofstream(dir / "m.txt").close();
  EXPECT_TRUE(read_matches((dir / "m.txt").string()).empty());
}

TEST(Matches, RoundTrip) {
  const fs::path dir = fresh_dir("rt_matches");
  std::vector<MatchSet> sets = {
      {"000.png", "001.png", "002.png",
       {{Vec2(1.25, 2.5), Vec2(3.0, 4.125), Vec2(0.0, 7.0)},
        {Vec2(0.1, 0.2), Vec2(0.3, 0.4), Vec2(0.5, 0.6)}}},
      {"003.png", "000.png", "001.png", {}}};
  write_matches((dir / "m.txt").string(), sets);
  const auto back = read_matches((dir / "m.txt").string(), 8, 8);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].ref, "000.png");
  EXPECT_EQ(back[1].i, "000.png");
  ASSERT_EQ(back[0].matches.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(back[0].matches[k].ref, sets[0].matches[k].ref);
    EXPECT_EQ(back[0].matches[k].i, sets[0].matches[k].i);
    EXPECT_EQ(back[0].matches[k].j, sets[0].matches[k].j);
  }
}

TEST(Matches, OutOfBoundsReportsLine) {
  const fs::path dir = fresh_dir("oob_matches");
  {
    std::ofstream out(dir / "m.txt");
    out << "# header\ntriplet a.png b.png c.png\n1 1 2 2 3 3\n1 1 2 2 30 3\n";
  }
  try {
    read_matches((dir / "m.txt").string(), 10, 10);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4);
  }
}

TEST(Matches, MalformedLineReportsLine) {
  const fs::path dir = fresh_dir("bad_matches");
  {
    std::ofstream out(dir / "m.txt");
    out << "triplet a.png b.png c.png\n1 1 2 2 3\n";
  }
  try {
    read_matches((dir / "m.txt").string());
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
}

TEST(GroundTruth, EmptySceneIsBlackAndInvalid) {
  SyntheticScene scene;
  const SceneCamera cam{small_camera(), look_at(Vec3(0, 0, -4), Vec3::Zero())};
  const GroundTruthView gt = render_ground_truth(scene, cam);
  for (double v : gt.color.data()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(gt.depth.isZero(0.0));
  EXPECT_TRUE(gt.opacity.isZero(0.0));
}

TEST(GroundTruth, OpaqueSphereThroughCenter) {
  SyntheticScene scene;
  scene.spheres.push_back({Vec3::Zero(), 1.0, 1e4, Vec3(0.2, 0.7, 0.4)});
  scene.near = 1.0;
  scene.far = 8.0;
  Ray ray;
  ray.origin = Vec3(0.0, 0.0, -4.0);
  ray.direction = Vec3::UnitZ();
  ray.t_near = 1.0;
  ray.t_far = 8.0;
  const RayIntegral r = integrate_ray(scene, ray);
  EXPECT_LT((r.color - Vec3(0.2, 0.7, 0.4)).norm(), 1e-9);
  // Expected depth inside an opaque medium sits 1/sigma behind the surface.
  EXPECT_NEAR(r.depth(), 3.0 + 1e-4, 1e-9);
  EXPECT_NEAR(*first_hit(scene, ray), 3.0, 1e-12);
}

TEST(GroundTruth, SlabTransmitsExponential) {
  SyntheticScene scene;
  scene.boxes.push_back({Vec3(-5, -5, 1.0), Vec3(5, 5, 3.0), 1.0, Vec3(1, 1, 1)});
  Ray ray;
  ray.t_near = 0.0;
  ray.t_far = 10.0;
  const RayIntegral r = integrate_ray(scene, ray);
  EXPECT_NEAR(1.0 - r.weight_sum, std::exp(-2.0), 1e-15);
  // Closed form of the mean absorption depth for a slab on [1, 3].
  const double expected_wt = 1.0 * (1.0 - std::exp(-2.0)) + (1.0 - 3.0 * std::exp(-2.0));
  EXPECT_NEAR(r.weighted_t, expected_wt, 1e-12);
}

TEST(GroundTruth, OverlapsAddDensities) {
  SyntheticScene scene;
  scene.boxes.push_back({Vec3(-1, -1, 1.0), Vec3(1, 1, 3.0), 1.0, Vec3(1, 0, 0)});
  scene.boxes.push_back({Vec3(-1, -1, 2.0), Vec3(1, 1, 4.0), 3.0, Vec3(0, 0, 1)});
  Ray ray;
  ray.t_far = 10.0;
  const auto segs = ray_segments(scene, ray);
  ASSERT_EQ(segs.size(), 3u);
  EXPECT_DOUBLE_EQ(segs[1].sigma, 4.0);
  EXPECT_LT((segs[1].color - Vec3(0.25, 0.0, 0.75)).norm(), 1e-15);
}

TEST(GroundTruth, AgreesWithQuadratureAt2048Samples) {
  const SyntheticScene scene = make_preset("two-spheres");
  const SceneCamera& cam = scene.cameras[2];
  const GroundTruthView gt = render_ground_truth(scene, cam);
  Rng rng(1);
  std::uniform_int_distribution<int> px(0, cam.intrinsics.width - 1);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const Vec2 p(px(rng), px(rng));
    const Ray ray = pixel_ray(p, cam.intrinsics, cam.pose, scene.near, scene.far);
    const int n = 2048;
    const auto t = stratified_samples(ray, n, nullptr);
    Matrix t_vals(1, n), sig(1, n), col(n, 3);
    for (int j = 0; j < n; ++j) {
      t_vals(0, j) = t[j];
      const Vec3 x = ray.at(t[j]);
      Vec3 c = Vec3::Zero();
      double s = 0.0;
      for (const Sphere& sp : scene.spheres) {
        if ((x - sp.center).norm() < sp.radius) {
          s += sp.sigma;
          c += sp.sigma * sp.color;
        }
      }
      sig(0, j) = s;
      col.row(j) = (s > 0 ? Vec3(c / s) : Vec3::Zero()).transpose();
    }
    const std::vector<Ray> rays = {ray};
    ad::Tape tape;
    const RenderResult r =
        composite({t_vals, sample_deltas(t_vals, rays), tape.constant(sig), tape.constant(col)},
                  rays);
    const Vec3 expected = gt.color.pixel(static_cast<int>(p.x()), static_cast<int>(p.y()));
    worst = std::max(worst, (r.color.value().row(0).transpose() - expected).cwiseAbs().maxCoeff());
  }
  // Quadrature error is dominated by surface crossings inside a sample gap.
  EXPECT_LT(worst, 2e-3);
}

TEST(GroundTruth, SupersampledColorStaysInRange) {
  const SyntheticScene scene = make_preset("textured-box");
  const GroundTruthView gt = render_ground_truth(scene, scene.cameras[0], 3);
  EXPECT_NO_THROW(gt.color.validate());
  EXPECT_GT(gt.opacity.maxCoeff(), 0.99);
}

TEST(Scene, ValidateRejectsBadPrimitivesAndBlindCameras) {
  SyntheticScene scene;
  scene.spheres.push_back({Vec3::Zero(), 1.0, -1.0, Vec3(0.5, 0.5, 0.5)});
  EXPECT_THROW(scene.validate_primitives(), ConfigError);
  scene.spheres[0].sigma = 1.0;
  scene.spheres[0].color = Vec3(1.5, 0, 0);
  EXPECT_THROW(scene.validate_primitives(), ConfigError);
  scene.spheres[0].color = Vec3(0.5, 0, 0);
  scene.cameras.push_back({small_camera(), look_at(Vec3(0, 0, -4), Vec3(0, 0, -10))});
  EXPECT_THROW(scene.validate(), ConfigError);
  scene.cameras[0].pose = look_at(Vec3(0, 0, -4), Vec3::Zero());
  EXPECT_NO_THROW(scene.validate());
}

TEST(Presets, ValidAndUnknownNameThrows) {
  EXPECT_NO_THROW(make_preset("two-spheres").validate());
  EXPECT_NO_THROW(make_preset("textured-box").validate());
  EXPECT_THROW(make_preset("teapot"), ConfigError);
}

TEST(ToyMatch, ExactMatchesSatisfyEpipolarConstraints) {
  for (const char* name : {"two-spheres", "textured-box"}) {
    const SyntheticScene scene = make_preset(name);
    Rng rng(2);
    const auto& c = scene.cameras;
    const auto m = toy_match(scene, c[1], c[0], c[2], 2000, 0.0, rng);
    ASSERT_GT(m.size(), 100u) << name;
    const Mat3 f_ri = pair_fundamental(c[1], c[0]);
    const Mat3 f_rj = pair_fundamental(c[1], c[2]);
    const Mat3 f_ij = pair_fundamental(c[0], c[2]);
    for (const MatchTriple& t : m) {
      ASSERT_LT(residual(f_ri, t.ref, t.i), 1e-9);
      ASSERT_LT(residual(f_rj, t.ref, t.j), 1e-9);
      ASSERT_LT(residual(f_ij, t.i, t.j), 1e-9);
      ASSERT_TRUE(c[1].intrinsics.contains(t.ref));
      ASSERT_TRUE(c[0].intrinsics.contains(t.i));
      ASSERT_TRUE(c[2].intrinsics.contains(t.j));
    }
  }
}

TEST(ToyMatch, OccludedPointsAreNeverEmitted) {
  // A large opaque sphere hides a small one from every camera on this side.
  SyntheticScene scene;
  scene.spheres.push_back({Vec3(0, 0, 0), 1.0, 50.0, Vec3(0.9, 0.1, 0.1)});
  scene.spheres.push_back({Vec3(0, 0, 3.0), 0.3, 50.0, Vec3(0.1, 0.9, 0.1)});
  scene.near = 1.0;
  scene.far = 12.0;
  const Intrinsics cam = small_camera();
  const SceneCamera a{cam, look_at(Vec3(0.0, 0.0, -5.0), Vec3(0, 0, 3.0))};
  const SceneCamera b{cam, look_at(Vec3(0.3, 0.0, -5.0), Vec3(0, 0, 3.0))};
  const SceneCamera c{cam, look_at(Vec3(0.0, 0.3, -5.0), Vec3(0, 0, 3.0))};
  Rng rng(3);
  const auto m = toy_match(scene, a, b, c, 3000, 0.0, rng);
  ASSERT_FALSE(m.empty());
  for (const MatchTriple& t : m) {
    const Ray ray = pixel_ray(t.ref, cam, a.pose, scene.near, scene.far);
    const double hit = *first_hit(scene, ray);
    const Vec3 x = ray.at(hit);
    // Every emitted point lies on the front sphere.
    ASSERT_NEAR(x.norm(), 1.0, 1e-6);
  }
}

TEST(ToyMatch, NoisyMatchesStayInBounds) {
  const SyntheticScene scene = make_preset("two-spheres");
  Rng rng(4);
  const auto& c = scene.cameras;
  const auto m = toy_match(scene, c[3], c[2], c[4], 1000, 1.5, rng);
  ASSERT_FALSE(m.empty());
  const Mat3 f = pair_fundamental(c[3], c[2]);
  double mean_residual = 0.0;
  for (const MatchTriple& t : m) {
    ASSERT_TRUE(c[3].intrinsics.contains(t.ref));
    ASSERT_TRUE(c[2].intrinsics.contains(t.i));
    ASSERT_TRUE(c[4].intrinsics.contains(t.j));
    mean_residual += residual(f, t.ref, t.i) / m.size();
  }
  EXPECT_GT(mean_residual, 1e-6);
}

TEST(Triplets, IdenticalCamerasOverAPlaneCoverTheImage) {
  SyntheticScene scene;
  scene.boxes.push_back({Vec3(-10, -10, 0.0), Vec3(10, 10, 0.2), 50.0, Vec3(0.5, 0.5, 0.5)});
  scene.near = 1.0;
  scene.far = 8.0;
  const SceneCamera cam{small_camera(), look_at(Vec3(0, 0, -4), Vec3::Zero())};
  scene.cameras = {cam, cam, cam};
  SyntheticOptions opt;
  opt.supersample = 1;
  opt.match_points = 20000;
  const SceneDataset ds = make_synthetic_dataset(scene, opt);
  const TripletSelection sel = build_triplets(ds, ds.matches);
  ASSERT_EQ(sel.triplets.size(), 3u);
  for (const TrainTriplet& t : sel.triplets) {
    const MaskRect& r = t.mask;
    EXPECT_LE(r.x_min, 1);
    EXPECT_LE(r.y_min, 1);
    EXPECT_GE(r.x_max, 46);
    EXPECT_GE(r.y_max, 46);
  }
}

TEST(Triplets, DisjointViewsGiveNoTriplets) {
  SyntheticScene scene;
  scene.spheres.push_back({Vec3(-20, 0, 0), 1.0, 50.0, Vec3(0.5, 0.5, 0.5)});
  scene.spheres.push_back({Vec3(20, 0, 0), 1.0, 50.0, Vec3(0.5, 0.5, 0.5)});
  scene.spheres.push_back({Vec3(0, 20, 0), 1.0, 50.0, Vec3(0.5, 0.5, 0.5)});
  scene.near = 1.0;
  scene.far = 8.0;
  scene.cameras = {{small_camera(), look_at(Vec3(-20, 0, -4), Vec3(-20, 0, 0))},
                   {small_camera(), look_at(Vec3(20, 0, -4), Vec3(20, 0, 0))},
                   {small_camera(), look_at(Vec3(0, 20, -4), Vec3(0, 20, 0))}};
  SyntheticOptions opt;
  opt.supersample = 1;
  const SceneDataset ds = make_synthetic_dataset(scene, opt);
  const TripletSelection sel = build_triplets(ds, ds.matches);
  EXPECT_TRUE(sel.triplets.empty());
  EXPECT_EQ(sel.warnings.size(), 3u);
}

TEST(Triplets, BelowEightMatchesIsRejected) {
  SceneDataset ds = tiny_dataset(3);
  MatchSet set{"000.png", "001.png", "002.png", {}};
  for (int k = 0; k < 7; ++k) {
    set.matches.push_back({Vec2(k, 1), Vec2(k, 2), Vec2(k, 3)});
  }
  EXPECT_TRUE(build_triplets(ds, {set}).triplets.empty());
  set.matches.push_back({Vec2(7, 1), Vec2(7, 2), Vec2(7, 3)});
  const TripletSelection sel = build_triplets(ds, {set});
  // Every member of the set can act as the reference.
  EXPECT_EQ(sel.triplets.size(), 3u);
}

TEST(Triplets, PicksPairWithMostMatches) {
  SceneDataset ds = tiny_dataset(5);
  MatchSet small{"000.png", "001.png", "002.png", {}};
  MatchSet large{"000.png", "003.png", "004.png", {}};
  for (int k = 0; k < 8; ++k) small.matches.push_back({Vec2(k, 1), Vec2(k, 2), Vec2(k, 3)});
  for (int k = 0; k < 7; ++k) {
    for (int q = 0; q < 2; ++q) {
      large.matches.push_back({Vec2(k, q), Vec2(k, 2), Vec2(k, 3)});
    }
  }
  const TripletSelection sel = build_triplets(ds, {small, large});
  ASSERT_FALSE(sel.triplets.empty());
  const TrainTriplet& t = sel.triplets.front();
  EXPECT_EQ(t.ref, 0);
  EXPECT_EQ(t.i, 3);
  EXPECT_EQ(t.j, 4);
}

TEST(TripletsProperty, MaskContainsEveryMatch) {
  const SyntheticScene scene = make_preset("two-spheres");
  SyntheticOptions opt;
  opt.supersample = 1;
  opt.match_points = 3200;
  opt.sigma_px = 0.7;
  const SceneDataset ds = make_synthetic_dataset(scene, opt);
  const TripletSelection sel = build_triplets(ds, ds.matches);
  ASSERT_EQ(sel.triplets.size(), 8u);
  std::size_t checked = 0;
  for (const TrainTriplet& t : sel.triplets) {
    EXPECT_NE(t.ref, t.i);
    EXPECT_NE(t.ref, t.j);
    EXPECT_NE(t.i, t.j);
    for (const MatchTriple& m : t.matches) {
      ASSERT_TRUE(contains(t.mask, m.ref));
      ++checked;
    }
    EXPECT_GE(t.mask.x_min, 0);
    EXPECT_LE(t.mask.x_max, ds.images[t.ref].width() - 1);
  }
  EXPECT_GE(checked, 10000u);
}

TEST(DatasetIo, WriteThenLoadIsIdentical) {
  const SyntheticScene scene = make_preset("two-spheres");
  SyntheticOptions opt;
  opt.supersample = 1;
  opt.match_points = 100;
  opt.patch_size = 16;
  opt.seed = 5;
  const SceneDataset ds = make_synthetic_dataset(scene, opt);
  const fs::path dir = fresh_dir("io");
  write_dataset(dir.string(), ds);
  const SceneDataset back = load_dataset(dir.string());
  EXPECT_EQ(back.names, ds.names);
  EXPECT_EQ(back.train, ds.train);
  EXPECT_EQ(back.test, ds.test);
  EXPECT_EQ(back.patch_size, 16);
  EXPECT_EQ(back.seed, 5u);
  EXPECT_DOUBLE_EQ(back.near, ds.near);
  EXPECT_DOUBLE_EQ(back.far, ds.far);
  EXPECT_DOUBLE_EQ(back.diameter, ds.diameter);
  ASSERT_EQ(back.depths.size(), ds.depths.size());
  ASSERT_EQ(back.matches.size(), ds.matches.size());
  for (std::size_t k = 0; k < ds.size(); ++k) {
    EXPECT_LT((back.cameras[k].pose.r - ds.cameras[k].pose.r).norm(), 1e-12);
    EXPECT_LT((back.cameras[k].pose.t - ds.cameras[k].pose.t).norm(), 1e-12);
    EXPECT_EQ(back.cameras[k].intrinsics.width, 64);
    EXPECT_LT((back.depths[k] - ds.depths[k]).cwiseAbs().maxCoeff(), 1e-5);
    for (std::size_t i = 0; i < ds.images[k].data().size(); ++i) {
      ASSERT_NEAR(back.images[k].data()[i], ds.images[k].data()[i], 0.5 / 255.0 + 1e-12);
    }
  }
  const SceneDataset again = load_dataset(dir.string());
  EXPECT_EQ(again.train, back.train);
  EXPECT_EQ(again.names, back.names);
}

TEST(DatasetIo, MissingPosesIsError) {
  const fs::path dir = fresh_dir("missing");
  fs::create_directories(dir / "images");
  EXPECT_THROW(load_dataset(dir.string()), Error);
}

TEST(OracleGeometry, MatchedLossVanishesAndEpipolarLossIsBoundedByCandidateSpacing) {
  const SyntheticScene scene = make_preset("two-spheres");
  const SceneDataset ds = make_synthetic_dataset(scene, {});
  const TripletSelection sel = build_triplets(ds, ds.matches);
  ASSERT_FALSE(sel.triplets.empty());
  auto surface = [&](const SceneCamera& cam, const Vec2& p) {
    const Ray ray = pixel_ray(p, cam.intrinsics, cam.pose, scene.near, scene.far);
    const auto hit = first_hit(scene, ray);
    return hit ? std::optional<Vec3>(ray.at(*hit)) : std::nullopt;
  };
  double l3d_sum = 0.0;
  int l3d_count = 0;
  double epi_sum = 0.0;
  double bound_sum = 0.0;
  int epi_count = 0;
  for (const TrainTriplet& t : sel.triplets) {
    const SceneCamera& cr = ds.cameras[t.ref];
    const SceneCamera& ci = ds.cameras[t.i];
    const SceneCamera& cj = ds.cameras[t.j];
    const Mat3 f = pair_fundamental(cr, ci);
    ad::Tape tape;
    for (const MatchTriple& m : t.matches) {
      const auto xr = surface(cr, m.ref);
      const auto xi = surface(ci, m.i);
      const auto xj = surface(cj, m.j);
      ASSERT_TRUE(xr && xi && xj);
      Matrix a(1, 3), b(1, 3), c(1, 3);
      a.row(0) = xr->transpose();
      b.row(0) = xi->transpose();
      c.row(0) = xj->transpose();
      l3d_sum += matched_features_loss(tape.constant(a), tape.constant(b), tape.constant(c))
                     ->value()(0, 0);
      ++l3d_count;

      const EpipolarCandidateSet set =
          epipolar_candidates(m.ref, ds.images[t.ref], ds.images[t.i], f);
      std::vector<Vec3> pts;
      double nearest_px = std::numeric_limits<double>::infinity();
      std::optional<Vec3> nearest;
      for (const Vec2& q : set.candidates) {
        const auto x = surface(ci, q);
        if (!x) continue;
        pts.push_back(*x);
        if ((q - m.i).norm() < nearest_px) {
          nearest_px = (q - m.i).norm();
          nearest = x;
        }
      }
      // Anti-aliased edge pixels can fail the color test and leave only wrong
      // candidates; those are counted by the epipolar acceptance criterion.
      if (!nearest || nearest_px > 1.0) continue;
      Matrix cand(static_cast<Eigen::Index>(pts.size()), 3);
      for (std::size_t k = 0; k < pts.size(); ++k) cand.row(k) = pts[k].transpose();
      const double loss = epipolar_loss(tape.constant(a), tape.constant(cand))->value()(0, 0);
      const double bound = (*nearest - *xr).squaredNorm();
      EXPECT_LE(loss, bound + 1e-12);
      epi_sum += loss;
      bound_sum += bound;
      ++epi_count;
    }
  }
  ASSERT_GT(l3d_count, 1000);
  ASSERT_GT(epi_count, 1000);
  EXPECT_LT(l3d_sum / l3d_count, 1e-3);
  EXPECT_LE(epi_sum, bound_sum);
  std::printf("epipolar mean %.4e over %d matches, spacing bound %.4e\n", epi_sum / epi_count,
              epi_count, bound_sum / epi_count);
}
