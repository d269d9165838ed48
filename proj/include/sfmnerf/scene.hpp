#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sfmnerf/geometry.hpp"
#include "sfmnerf/image.hpp"

namespace sfmnerf {

// Constant density and emitted color inside, empty space outside.
struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  double sigma = 1.0;
  Vec3 color = Vec3::Ones();
};

struct Box {
  Vec3 lo = -Vec3::Ones();
  Vec3 hi = Vec3::Ones();
  double sigma = 1.0;
  Vec3 color = Vec3::Ones();
};

struct SceneCamera {
  Intrinsics intrinsics;
  Pose pose;  // world to camera
};

struct SyntheticScene {
  std::vector<Sphere> spheres;
  std::vector<Box> boxes;
  double near = 2.0;
  double far = 6.0;
  double diameter = 1.0;  // extent used to normalize depth errors
  std::vector<SceneCamera> cameras;

  // Throws ConfigError on negative densities, colors outside [0, 1],
  // degenerate primitives or cameras that see no primitive.
  void validate() const;
  // Camera-independent part of validate().
  void validate_primitives() const;
};

// Constant-density interval of a ray.
struct RaySegment {
  double t0 = 0.0;
  double t1 = 0.0;
  double sigma = 0.0;
  Vec3 color = Vec3::Zero();
};

// Intervals of [ray.t_near, ray.t_far] where the density is nonzero, in
// increasing order. Overlapping primitives add densities and mix colors by
// density.
std::vector<RaySegment> ray_segments(const SyntheticScene& scene, const Ray& ray);

struct RayIntegral {
  Vec3 color = Vec3::Zero();
  double weight_sum = 0.0;   // 1 - T(t_far)
  double weighted_t = 0.0;   // integral of T sigma t
  double depth() const { return weight_sum > 0.0 ? weighted_t / weight_sum : 0.0; }
};

// Closed-form volume rendering integral along the ray over black background.
RayIntegral integrate_ray(const SyntheticScene& scene, const Ray& ray);

// Parameter of the first primitive surface hit in [t_min, t_max], if any.
std::optional<double> first_hit(const SyntheticScene& scene, const Ray& ray);

inline constexpr double kGroundTruthOpacity = 0.5;

struct GroundTruthView {
  Image color;
  Matrix depth;    // distance along the unit pixel ray; 0 where invalid
  Matrix opacity;  // accumulated weight of the center ray
};

// Renders every pixel center in closed form. With supersample > 1 the color
// is the mean over a supersample x supersample grid inside the pixel
// footprint; depth and opacity always come from the center ray. Depth is
// marked invalid (0) where the opacity is below kGroundTruthOpacity.
GroundTruthView render_ground_truth(const SyntheticScene& scene, const SceneCamera& cam,
                                    int supersample = 1);

struct MatchTriple {
  Vec2 ref = Vec2::Zero();
  Vec2 i = Vec2::Zero();
  Vec2 j = Vec2::Zero();
};

// Samples surface points of the primitives, keeps those visible and in
// bounds in all three cameras and returns their projections with optional
// Gaussian pixel noise. Noisy triples that leave the image are dropped.
std::vector<MatchTriple> toy_match(const SyntheticScene& scene, const SceneCamera& ref,
                                   const SceneCamera& cam_i, const SceneCamera& cam_j,
                                   int num_points, double sigma_px, Rng& rng);

// Named scene presets: "two-spheres" and "textured-box".
SyntheticScene make_preset(const std::string& name);

}  // namespace sfmnerf
