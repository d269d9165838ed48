#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sfmnerf/image.hpp"
#include "sfmnerf/types.hpp"

namespace sfmnerf {

// Pinhole intrinsics. Pixel (i, j) of an image is centered on the continuous
// coordinate (i, j); rendering, bilinear sampling and projection all share
// this coordinate frame.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
  Mat3 matrix() const;
  Mat3 inverse_matrix() const;
  bool contains(const Vec2& p) const {
    return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width - 1.0 && p.y() <= height - 1.0;
  }
};

// Rigid transform. Global camera poses map world points into the camera
// frame: x_cam = r * x_world + t.
struct Pose {
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static Pose identity() { return {}; }

  // Throws InvalidPoseError unless r is a proper rotation within 1e-9.
  void validate() const;
  Vec3 apply(const Vec3& x) const { return r * x + t; }
  Pose inverse() const { return {r.transpose(), -r.transpose() * t}; }
  // World position of the camera center.
  Vec3 center() const { return -r.transpose() * t; }
};

Pose compose(const Pose& outer, const Pose& inner);

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

struct EpipolarCandidateSet {
  Vec3 line = Vec3::Zero();  // a*x + b*y + c = 0 in pixels of the other image
  std::vector<Vec2> candidates;
  std::vector<double> color_distances;  // aligned with candidates
  double color_threshold = 0.05;
};

inline constexpr double kDefaultEpipolarThreshold = 0.05;

// Relative transform taking reference-camera coordinates to other-camera
// coordinates: r = r_other^T r_ref, t = r_other^T (t_ref - t_other).
// Both inputs are camera-to-world poses (the inverse of the stored global
// poses); see relative_pose_from_global for the stored convention.
Pose relative_pose(const Pose& ref, const Pose& other);
inline Pose relative_pose_from_global(const Pose& ref_world_to_cam,
                                      const Pose& other_world_to_cam) {
  return relative_pose(ref_world_to_cam.inverse(), other_world_to_cam.inverse());
}

// Pinhole projection. Throws BehindCameraError when camera-frame z <= 1e-8.
Vec2 project(const Vec3& x, const Intrinsics& cam, const Pose& pose);
std::optional<Vec2> try_project(const Vec3& x, const Intrinsics& cam, const Pose& pose);

// World point at camera-frame depth `depth` whose projection is p.
Vec3 back_project(const Vec2& p, double depth, const Intrinsics& cam, const Pose& pose);

// F with p_other^T F p_ref = 0 for homogeneous pixels, normalized to unit
// Frobenius norm. `rel` maps reference-camera into other-camera coordinates.
Mat3 fundamental_matrix(const Intrinsics& ref_cam, const Intrinsics& other_cam, const Pose& rel);
inline Mat3 fundamental_matrix(const Intrinsics& cam, const Pose& rel) {
  return fundamental_matrix(cam, cam, rel);
}

// Point-to-line distance in pixels.
double epipolar_distance(const Vec3& line, const Vec2& p);

// Walks the epipolar line of p_ref across other_img in 1-pixel steps along
// the line's dominant axis and keeps points whose bilinear color is within
// `threshold` (Euclidean RGB) of the reference color. A threshold >= sqrt(3)
// keeps every in-bounds point.
EpipolarCandidateSet epipolar_candidates(const Vec2& p_ref, const Image& ref_img,
                                         const Image& other_img, const Mat3& fundamental,
                                         double threshold = kDefaultEpipolarThreshold);

// One block of the plain-text pose file.
struct PoseRecord {
  std::string image;
  Pose pose;
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
};

std::vector<PoseRecord> read_pose_file(const std::string& path);
void write_pose_file(const std::string& path, const std::vector<PoseRecord>& records);

// World-to-camera pose for a camera at `eye` looking at `target` (x right,
// y down, z forward in the camera frame).
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitY());

}  // namespace sfmnerf
