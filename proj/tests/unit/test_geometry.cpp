#include <gtest/gtest.h>

#include <Eigen/SVD>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sfmnerf/error.hpp"
#include "sfmnerf/field.hpp"
#include "sfmnerf/geometry.hpp"
#include "test_support.hpp"

using namespace sfmnerf;
using sfmnerf::testing::random_image;
using sfmnerf::testing::random_pose;

namespace {

Intrinsics test_camera() { return {100.0, 110.0, 50.0, 40.0, 101, 81}; }

Vec3 random_point_in_front(const Pose& pose, Rng& rng) {
  std::uniform_real_distribution<double> xy(-1.0, 1.0);
  std::uniform_real_distribution<double> z(1.0, 5.0);
  const Vec3 cam(xy(rng), xy(rng), z(rng));
  return pose.inverse().apply(cam);
}

double residual(const Mat3& f, const Vec2& p_ref, const Vec2& p_other) {
  return std::abs(Vec3(p_other.x(), p_other.y(), 1.0).dot(f * Vec3(p_ref.x(), p_ref.y(), 1.0)));
}

}  // namespace

TEST(RelativePose, IdentityInputsGiveIdentity) {
  const Pose rel = relative_pose(Pose::identity(), Pose::identity());
  EXPECT_TRUE(rel.r.isApprox(Mat3::Identity()));
  EXPECT_EQ(rel.t, Vec3::Zero());
}

TEST(RelativePose, TranslationOnly) {
  const Pose other{Mat3::Identity(), Vec3(1.0, 0.0, 0.0)};
  const Pose rel = relative_pose(Pose::identity(), other);
  EXPECT_TRUE(rel.r.isApprox(Mat3::Identity()));
  EXPECT_NEAR((rel.t - Vec3(-1.0, 0.0, 0.0)).norm(), 0.0, 1e-15);
}

TEST(RelativePose, ComposesWithOtherToRef) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose ref = random_pose(rng);
    const Pose other = random_pose(rng);
    const Pose rel = relative_pose(ref, other);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int k = 0; k < 100; ++k) {
      const Vec3 x(u(rng), u(rng), u(rng));
      EXPECT_LT((other.apply(rel.apply(x)) - ref.apply(x)).norm(), 1e-9);
    }
  }
}

TEST(RelativePose, SelfIsIdentity) {
  Rng rng(8);
  for (int k = 0; k < 100; ++k) {
    const Pose a = random_pose(rng);
    const Pose rel = relative_pose(a, a);
    EXPECT_LT((rel.r - Mat3::Identity()).norm(), 1e-12);
    EXPECT_LT(rel.t.norm(), 1e-12);
  }
}

TEST(RelativePose, FromGlobalMapsRefCameraToOtherCamera) {
  Rng rng(9);
  for (int k = 0; k < 50; ++k) {
    const Pose ref = random_pose(rng);
    const Pose other = random_pose(rng);
    const Pose rel = relative_pose_from_global(ref, other);
    const Vec3 x = random_point_in_front(ref, rng);
    EXPECT_LT((rel.apply(ref.apply(x)) - other.apply(x)).norm(), 1e-9);
  }
}

TEST(RelativePose, RejectsNonRotation) {
  Pose bad;
  bad.r(0, 0) = 2.0;
  EXPECT_THROW(relative_pose(bad, Pose::identity()), InvalidPoseError);
  EXPECT_THROW(relative_pose(Pose::identity(), bad), InvalidPoseError);
  Pose reflect;
  reflect.r(2, 2) = -1.0;
  EXPECT_THROW(reflect.validate(), InvalidPoseError);
}

TEST(Project, PrincipalPointOnAxis) {
  const Intrinsics cam = test_camera();
  const Vec2 p = project(Vec3(0.0, 0.0, 1.0), cam, Pose::identity());
  EXPECT_DOUBLE_EQ(p.x(), cam.cx);
  EXPECT_DOUBLE_EQ(p.y(), cam.cy);
}

TEST(Project, PinholeDefinition) {
  Intrinsics cam{100.0, 100.0, 50.0, 50.0, 200, 200};
  EXPECT_DOUBLE_EQ(project(Vec3(1.0, 0.0, 1.0), cam, Pose::identity()).x(), 150.0);
}

TEST(Project, BehindCameraThrows) {
  const Intrinsics cam = test_camera();
  EXPECT_THROW(project(Vec3(0.0, 0.0, -1.0), cam, Pose::identity()), BehindCameraError);
  EXPECT_THROW(project(Vec3(0.0, 0.0, 1e-9), cam, Pose::identity()), BehindCameraError);
  EXPECT_FALSE(try_project(Vec3(0.0, 0.0, 0.0), cam, Pose::identity()).has_value());
}

TEST(BackProject, OpticalAxis) {
  const Intrinsics cam = test_camera();
  const Vec3 x = back_project(Vec2(cam.cx, cam.cy), 1.0, cam, Pose::identity());
  EXPECT_LT((x - Vec3(0.0, 0.0, 1.0)).norm(), 1e-15);
}

TEST(BackProject, DepthScalesOffsets) {
  const Intrinsics cam = test_camera();
  const Vec2 p(70.3, 12.9);
  const Vec3 a = back_project(p, 1.0, cam, Pose::identity());
  const Vec3 b = back_project(p, 2.0, cam, Pose::identity());
  EXPECT_NEAR(b.x(), 2.0 * a.x(), 1e-14);
  EXPECT_NEAR(b.y(), 2.0 * a.y(), 1e-14);
}

TEST(BackProject, RejectsNonPositiveDepth) {
  const Intrinsics cam = test_camera();
  EXPECT_THROW(back_project(Vec2(1.0, 1.0), 0.0, cam, Pose::identity()), InvalidDepthError);
  EXPECT_THROW(back_project(Vec2(1.0, 1.0), -2.0, cam, Pose::identity()), InvalidDepthError);
}

TEST(BackProject, RoundTripRandomPoses) {
  Rng rng(10);
  const Intrinsics cam = test_camera();
  std::uniform_real_distribution<double> px(0.0, cam.width - 1.0);
  std::uniform_real_distribution<double> py(0.0, cam.height - 1.0);
  std::uniform_real_distribution<double> depth(0.1, 20.0);
  for (int k = 0; k < 10000; ++k) {
    const Pose pose = random_pose(rng);
    const Vec2 p(px(rng), py(rng));
    const double z = depth(rng);
    const Vec3 x = back_project(p, z, cam, pose);
    EXPECT_NEAR(pose.apply(x).z(), z, 1e-9 * z);
    EXPECT_LT((project(x, cam, pose) - p).norm(), 1e-9);
  }
}

TEST(Fundamental, RankTwoAndUnitNorm) {
  Rng rng(11);
  const Intrinsics cam = test_camera();
  for (int k = 0; k < 100; ++k) {
    const Mat3 f = fundamental_matrix(cam, random_pose(rng));
    EXPECT_NEAR(f.norm(), 1.0, 1e-12);
    Eigen::JacobiSVD<Mat3> svd(f);
    EXPECT_LT(svd.singularValues()(2), 1e-12);
    EXPECT_GT(svd.singularValues()(1), 1e-9);
  }
}

TEST(Fundamental, SyntheticCorrespondences) {
  Rng rng(12);
  const Intrinsics cam_ref = test_camera();
  const Intrinsics cam_other{90.0, 95.0, 45.0, 41.0, 91, 83};
  int trials = 0;
  while (trials < 20) {
    const Pose ref = random_pose(rng);
    const Pose other = random_pose(rng);
    const Mat3 f = fundamental_matrix(cam_ref, cam_other, relative_pose_from_global(ref, other));
    double worst = 0.0;
    int used = 0;
    for (int attempt = 0; attempt < 100000 && used < 100; ++attempt) {
      const Vec3 x = random_point_in_front(ref, rng);
      const auto p_other = try_project(x, cam_other, other);
      if (!p_other) {
        continue;
      }
      worst = std::max(worst, residual(f, project(x, cam_ref, ref), *p_other));
      ++used;
    }
    if (used < 100) {
      continue;
    }
    EXPECT_LT(worst, 1e-9);
    ++trials;
  }
}

TEST(Fundamental, EpipoleIsOtherCameraCenter) {
  Rng rng(13);
  const Intrinsics cam = test_camera();
  int checked = 0;
  while (checked < 20) {
    const Pose ref = random_pose(rng);
    const Pose other = random_pose(rng);
    const auto e = try_project(other.center(), cam, ref);
    if (!e) {
      continue;
    }
    const Mat3 f = fundamental_matrix(cam, relative_pose_from_global(ref, other));
    // F e = 0 for the epipole in the reference image.
    Eigen::JacobiSVD<Mat3> svd(f, Eigen::ComputeFullV);
    const Vec3 null = svd.matrixV().col(2);
    const Vec2 epipole = null.head<2>() / null.z();
    EXPECT_LT((epipole - *e).norm(), 1e-6 * (1.0 + e->norm()));
    ++checked;
  }
}

TEST(Fundamental, DegenerateBaselineThrows) {
  Rng rng(14);
  const Pose rotation_only{sfmnerf::testing::random_rotation(rng), Vec3::Zero()};
  EXPECT_THROW(fundamental_matrix(test_camera(), rotation_only), DegenerateBaselineError);
}

TEST(EpipolarCandidates, MaxThresholdKeepsAllLinePoints) {
  Rng rng(15);
  const Image ref_img = random_image(40, 30, 3, rng);
  const Image other_img = random_image(40, 30, 3, rng);
  const Intrinsics cam{40.0, 40.0, 19.5, 14.5, 40, 30};
  const Pose ref = Pose::identity();
  const Pose other{Eigen::AngleAxisd(0.1, Vec3::UnitY()).toRotationMatrix(), Vec3(-0.5, 0.02, 0.0)};
  const Mat3 f = fundamental_matrix(cam, relative_pose_from_global(ref, other));
  const auto all = epipolar_candidates(Vec2(12.3, 17.8), ref_img, other_img, f, std::sqrt(3.0));
  ASSERT_FALSE(all.candidates.empty());
  // Brute force: every dominant-axis integer step that lands inside.
  const double a = all.line.x(), b = all.line.y(), c = all.line.z();
  int expected = 0;
  for (int x = 0; x < 40; ++x) {
    const double y = -(a * x + c) / b;
    expected += (y >= 0.0 && y <= 29.0) ? 1 : 0;
  }
  EXPECT_EQ(static_cast<int>(all.candidates.size()), expected);
  for (const Vec2& q : all.candidates) {
    EXPECT_LT(epipolar_distance(all.line, q), 0.5);
  }
  EXPECT_EQ(all.candidates.size(), all.color_distances.size());
  const auto none = epipolar_candidates(Vec2(12.3, 17.8), ref_img, other_img, f, 0.0);
  EXPECT_TRUE(none.candidates.empty());
}

TEST(EpipolarCandidates, LineMissingImageIsEmpty) {
  Rng rng(16);
  const Image img = random_image(20, 20, 3, rng);
  // Line y = -100 in the other image.
  Mat3 f = Mat3::Zero();
  f(2, 2) = 100.0;
  f(1, 2) = 1.0;
  const auto set = epipolar_candidates(Vec2(3.0, 4.0), img, img, f, std::sqrt(3.0));
  EXPECT_TRUE(set.candidates.empty());
}

TEST(EpipolarCandidates, ReferenceOutsideThrows) {
  Rng rng(17);
  const Image img = random_image(20, 20, 3, rng);
  EXPECT_THROW(epipolar_candidates(Vec2(-1.0, 4.0), img, img, Mat3::Identity()), OutOfBoundsError);
}

TEST(EpipolarCandidates, FilteredCandidatesRespectThreshold) {
  Rng rng(18);
  const Image ref_img = random_image(30, 30, 3, rng);
  const Image other_img = random_image(30, 30, 3, rng);
  const Intrinsics cam{30.0, 30.0, 14.5, 14.5, 30, 30};
  const Pose other{Mat3::Identity(), Vec3(-0.3, -0.1, 0.0)};
  const Mat3 f = fundamental_matrix(cam, relative_pose_from_global(Pose::identity(), other));
  const Vec2 p(10.0, 20.0);
  const auto set = epipolar_candidates(p, ref_img, other_img, f, 0.4);
  const Color ref_color = bilinear_sample(ref_img, p);
  for (std::size_t k = 0; k < set.candidates.size(); ++k) {
    const double d = (bilinear_sample(other_img, set.candidates[k]) - ref_color).norm();
    EXPECT_LT(d, 0.4);
    EXPECT_DOUBLE_EQ(d, set.color_distances[k]);
  }
}

TEST(PoseFile, RoundTripAndErrors) {
  Rng rng(19);
  const auto dir = std::filesystem::temp_directory_path() / "sfmnerf_pose_test";
  std::filesystem::create_directories(dir);
  std::vector<PoseRecord> recs;
  for (int k = 0; k < 3; ++k) {
    recs.push_back({"img" + std::to_string(k) + ".png", random_pose(rng), 100.0 + k, 101.0, 31.5,
                    30.5});
  }
  const std::string path = (dir / "poses.txt").string();
  write_pose_file(path, recs);
  const auto back = read_pose_file(path);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t k = 0; k < recs.size(); ++k) {
    EXPECT_EQ(back[k].image, recs[k].image);
    EXPECT_EQ(back[k].pose.r, recs[k].pose.r);
    EXPECT_EQ(back[k].pose.t, recs[k].pose.t);
    EXPECT_EQ(back[k].fx, recs[k].fx);
  }
  {
    std::ofstream out(path);
    out << "a.png\n1 0 0 0\n0 1 0 0\n0 0 1 0\n100 100 10\n";
  }
  try {
    read_pose_file(path);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 5);
  }
  {
    std::ofstream out(path);
    out << "a.png\n2 0 0 0\n0 1 0 0\n0 0 1 0\n100 100 10 10\n";
  }
  EXPECT_THROW(read_pose_file(path), ParseError);
  std::filesystem::remove_all(dir);
}

TEST(LookAt, FacesTarget) {
  const Vec3 eye(3.0, 1.0, 2.0);
  const Pose pose = look_at(eye, Vec3::Zero());
  pose.validate();
  EXPECT_LT((pose.center() - eye).norm(), 1e-12);
  const Vec3 target_cam = pose.apply(Vec3::Zero());
  EXPECT_NEAR(target_cam.x(), 0.0, 1e-12);
  EXPECT_NEAR(target_cam.y(), 0.0, 1e-12);
  EXPECT_GT(target_cam.z(), 0.0);
  // World up projects upward in the image (negative camera y).
  EXPECT_LT(pose.r.row(1).dot(Vec3::UnitY()), 0.0);
}
