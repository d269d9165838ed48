#include "sfmnerf/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "sfmnerf/error.hpp"
#include "sfmnerf/field.hpp"

namespace sfmnerf {
namespace {

struct Interval {
  double t0;
  double t1;
};

std::optional<Interval> intersect(const Sphere& s, const Ray& ray) {
  const Vec3 oc = ray.origin - s.center;
  const double a = ray.direction.squaredNorm();
  const double b = oc.dot(ray.direction);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - a * c;
  if (disc <= 0.0) {
    return std::nullopt;
  }
  const double root = std::sqrt(disc);
  // Stable quadratic roots.
  const double q = b >= 0.0 ? -(b + root) : -(b - root);
  double t0 = q / a;
  double t1 = c / q;
  if (t0 > t1) {
    std::swap(t0, t1);
  }
  return Interval{t0, t1};
}

std::optional<Interval> intersect(const Box& box, const Ray& ray) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    const double o = ray.origin[k];
    const double d = ray.direction[k];
    if (std::abs(d) < 1e-300) {
      if (o < box.lo[k] || o > box.hi[k]) {
        return std::nullopt;
      }
      continue;
    }
    double a = (box.lo[k] - o) / d;
    double b = (box.hi[k] - o) / d;
    if (a > b) {
      std::swap(a, b);
    }
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (!(t1 > t0)) {
    return std::nullopt;
  }
  return Interval{t0, t1};
}

struct Span {
  double t0;
  double t1;
  double sigma;
  Vec3 color;
};

std::vector<Span> clipped_spans(const SyntheticScene& scene, const Ray& ray) {
  std::vector<Span> spans;
  auto add = [&](std::optional<Interval> iv, double sigma, const Vec3& color) {
    if (!iv || sigma <= 0.0) {
      return;
    }
    const double t0 = std::max(iv->t0, ray.t_near);
    const double t1 = std::min(iv->t1, ray.t_far);
    if (t1 > t0) {
      spans.push_back({t0, t1, sigma, color});
    }
  };
  for (const Sphere& s : scene.spheres) {
    add(intersect(s, ray), s.sigma, s.color);
  }
  for (const Box& b : scene.boxes) {
    add(intersect(b, ray), b.sigma, b.color);
  }
  return spans;
}

// (a + 1/s) - (b + 1/s) e^{-s L} divided by L, as a function of x = s L.
double depth_factor(double x) {
  if (x < 1e-4) {
    return x / 2.0 - x * x / 3.0 + x * x * x / 8.0;
  }
  return -std::expm1(-x) / x - std::exp(-x);
}

void check_color(const Vec3& c, const char* what) {
  for (int k = 0; k < 3; ++k) {
    if (!(c[k] >= 0.0 && c[k] <= 1.0)) {
      throw ConfigError(std::string(what) + " color outside [0, 1]");
    }
  }
}

bool sees_primitive(const SyntheticScene& scene, const SceneCamera& cam) {
  const int n = 8;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      const Vec2 p((cam.intrinsics.width - 1.0) * (a + 0.5) / n,
                   (cam.intrinsics.height - 1.0) * (b + 0.5) / n);
      if (!ray_segments(scene, pixel_ray(p, cam.intrinsics, cam.pose, scene.near, scene.far))
               .empty()) {
        return true;
      }
    }
  }
  return false;
}

Vec3 sample_sphere_surface(const Sphere& s, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(normal(rng), normal(rng), normal(rng));
  } while (v.norm() < 1e-12);
  return s.center + s.radius * v.normalized();
}

Vec3 sample_box_surface(const Box& b, Rng& rng) {
  const Vec3 e = b.hi - b.lo;
  const double areas[3] = {e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};
  std::discrete_distribution<int> face({areas[0], areas[0], areas[1], areas[1], areas[2], areas[2]});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec3 p(b.lo.x() + unit(rng) * e.x(), b.lo.y() + unit(rng) * e.y(), b.lo.z() + unit(rng) * e.z());
  const int f = face(rng);
  p[f / 2] = f % 2 == 0 ? b.lo[f / 2] : b.hi[f / 2];
  return p;
}

std::optional<Vec2> visible_projection(const SyntheticScene& scene, const SceneCamera& cam,
                                       const Vec3& x) {
  const auto p = try_project(x, cam.intrinsics, cam.pose);
  if (!p || !cam.intrinsics.contains(*p)) {
    return std::nullopt;
  }
  const Vec3 c = cam.pose.center();
  const double dist = (x - c).norm();
  Ray ray{c, (x - c) / dist, 0.0, dist + 1.0};
  const auto hit = first_hit(scene, ray);
  if (!hit || std::abs(*hit - dist) > 1e-7 * (1.0 + dist)) {
    return std::nullopt;
  }
  return p;
}

}  // namespace

void SyntheticScene::validate_primitives() const {
  for (const Sphere& s : spheres) {
    if (!(s.radius > 0.0) || !(s.sigma >= 0.0) || !std::isfinite(s.sigma)) {
      throw ConfigError("sphere needs a positive radius and finite nonnegative density");
    }
    check_color(s.color, "sphere");
  }
  for (const Box& b : boxes) {
    if (!(b.hi.array() > b.lo.array()).all() || !(b.sigma >= 0.0) || !std::isfinite(b.sigma)) {
      throw ConfigError("box needs hi > lo and a finite nonnegative density");
    }
    check_color(b.color, "box");
  }
  if (!(near >= 0.0) || !(far > near)) {
    throw ConfigError("scene bounds need 0 <= near < far");
  }
}

void SyntheticScene::validate() const {
  validate_primitives();
  for (std::size_t k = 0; k < cameras.size(); ++k) {
    cameras[k].intrinsics.validate();
    cameras[k].pose.validate();
    if (!sees_primitive(*this, cameras[k])) {
      throw ConfigError("camera " + std::to_string(k) + " sees no primitive");
    }
  }
}

std::vector<RaySegment> ray_segments(const SyntheticScene& scene, const Ray& ray) {
  const std::vector<Span> spans = clipped_spans(scene, ray);
  std::vector<double> cuts;
  cuts.reserve(spans.size() * 2);
  for (const Span& s : spans) {
    cuts.push_back(s.t0);
    cuts.push_back(s.t1);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<RaySegment> out;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double a = cuts[k];
    const double b = cuts[k + 1];
    const double mid = 0.5 * (a + b);
    double sigma = 0.0;
    Vec3 emitted = Vec3::Zero();
    for (const Span& s : spans) {
      if (s.t0 <= mid && mid < s.t1) {
        sigma += s.sigma;
        emitted += s.sigma * s.color;
      }
    }
    if (sigma > 0.0) {
      out.push_back({a, b, sigma, emitted / sigma});
    }
  }
  return out;
}

RayIntegral integrate_ray(const SyntheticScene& scene, const Ray& ray) {
  RayIntegral out;
  double transmittance = 1.0;
  for (const RaySegment& seg : ray_segments(scene, ray)) {
    const double len = seg.t1 - seg.t0;
    const double x = seg.sigma * len;
    const double absorbed = -std::expm1(-x);
    const double w = transmittance * absorbed;
    out.color += w * seg.color;
    out.weight_sum += w;
    // integral over the segment of T(t0) sigma e^{-sigma (t - t0)} t dt
    out.weighted_t += transmittance * (seg.t0 * absorbed + len * depth_factor(x));
    transmittance *= std::exp(-x);
  }
  return out;
}

std::optional<double> first_hit(const SyntheticScene& scene, const Ray& ray) {
  const std::vector<Span> spans = clipped_spans(scene, ray);
  if (spans.empty()) {
    return std::nullopt;
  }
  double t = std::numeric_limits<double>::infinity();
  for (const Span& s : spans) {
    t = std::min(t, s.t0);
  }
  return t;
}

GroundTruthView render_ground_truth(const SyntheticScene& scene, const SceneCamera& cam,
                                    int supersample) {
  if (supersample < 1) {
    throw ConfigError("supersample must be at least 1");
  }
  cam.intrinsics.validate();
  cam.pose.validate();
  const int w = cam.intrinsics.width;
  const int h = cam.intrinsics.height;
  GroundTruthView out{Image(w, h, 3), Matrix::Zero(h, w), Matrix::Zero(h, w)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Ray center = pixel_ray(Vec2(x, y), cam.intrinsics, cam.pose, scene.near, scene.far);
      const RayIntegral c = integrate_ray(scene, center);
      Vec3 color = c.color;
      if (supersample > 1) {
        color.setZero();
        for (int b = 0; b < supersample; ++b) {
          for (int a = 0; a < supersample; ++a) {
            const Vec2 p(x - 0.5 + (a + 0.5) / supersample, y - 0.5 + (b + 0.5) / supersample);
            color += integrate_ray(scene,
                                   pixel_ray(p, cam.intrinsics, cam.pose, scene.near, scene.far))
                         .color;
          }
        }
        color /= static_cast<double>(supersample * supersample);
      }
      out.color.set_pixel(x, y, color.cwiseMax(0.0).cwiseMin(1.0));
      out.opacity(y, x) = c.weight_sum;
      out.depth(y, x) = c.weight_sum >= kGroundTruthOpacity ? c.depth() : 0.0;
    }
  }
  return out;
}

std::vector<MatchTriple> toy_match(const SyntheticScene& scene, const SceneCamera& ref,
                                   const SceneCamera& cam_i, const SceneCamera& cam_j,
                                   int num_points, double sigma_px, Rng& rng) {
  std::vector<double> areas;
  for (const Sphere& s : scene.spheres) {
    areas.push_back(s.sigma > 0.0 ? 4.0 * std::numbers::pi * s.radius * s.radius : 0.0);
  }
  for (const Box& b : scene.boxes) {
    const Vec3 e = b.hi - b.lo;
    areas.push_back(b.sigma > 0.0 ? 2.0 * (e.x() * e.y() + e.y() * e.z() + e.x() * e.z()) : 0.0);
  }
  std::vector<MatchTriple> out;
  if (areas.empty() || num_points <= 0 ||
      std::all_of(areas.begin(), areas.end(), [](double a) { return a <= 0.0; })) {
    return out;
  }
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::normal_distribution<double> noise(0.0, sigma_px > 0.0 ? sigma_px : 1.0);
  for (int n = 0; n < num_points; ++n) {
    const std::size_t k = pick(rng);
    const Vec3 x = k < scene.spheres.size()
                       ? sample_sphere_surface(scene.spheres[k], rng)
                       : sample_box_surface(scene.boxes[k - scene.spheres.size()], rng);
    const auto pr = visible_projection(scene, ref, x);
    const auto pi = pr ? visible_projection(scene, cam_i, x) : std::nullopt;
    const auto pj = pi ? visible_projection(scene, cam_j, x) : std::nullopt;
    if (!pj) {
      continue;
    }
    MatchTriple m{*pr, *pi, *pj};
    if (sigma_px > 0.0) {
      for (Vec2* p : {&m.ref, &m.i, &m.j}) {
        p->x() += noise(rng);
        p->y() += noise(rng);
      }
      if (!ref.intrinsics.contains(m.ref) || !cam_i.intrinsics.contains(m.i) ||
          !cam_j.intrinsics.contains(m.j)) {
        continue;
      }
    }
    out.push_back(m);
  }
  return out;
}

namespace {

Intrinsics preset_intrinsics() {
  Intrinsics k;
  k.width = 64;
  k.height = 64;
  k.fx = 80.0;
  k.fy = 80.0;
  k.cx = 31.5;
  k.cy = 31.5;
  return k;
}

std::vector<SceneCamera> arc_cameras(int count, double radius, double el_a, double el_b,
                                     const Vec3& target) {
  std::vector<SceneCamera> cams;
  const double deg = std::numbers::pi / 180.0;
  for (int k = 0; k < count; ++k) {
    const double az = (-80.0 + 160.0 * k / (count - 1)) * deg;
    const double el = (k % 2 == 0 ? el_a : el_b) * deg;
    const Vec3 eye(radius * std::cos(el) * std::sin(az), radius * std::sin(el),
                   radius * std::cos(el) * std::cos(az));
    cams.push_back({preset_intrinsics(), look_at(eye, target)});
  }
  return cams;
}

}  // namespace

SyntheticScene make_preset(const std::string& name) {
  SyntheticScene scene;
  if (name == "two-spheres") {
    scene.spheres.push_back({Vec3(-0.55, 0.0, 0.15), 0.6, 40.0, Vec3(0.85, 0.3, 0.2)});
    scene.spheres.push_back({Vec3(0.6, 0.05, -0.25), 0.5, 40.0, Vec3(0.2, 0.55, 0.85)});
    scene.near = 2.0;
    scene.far = 6.0;
    scene.diameter = 2.4;
    scene.cameras = arc_cameras(9, 4.0, 15.0, 25.0, Vec3::Zero());
  } else if (name == "textured-box") {
    const Vec3 palette[6] = {Vec3(0.9, 0.85, 0.3), Vec3(0.25, 0.6, 0.3), Vec3(0.8, 0.35, 0.5),
                             Vec3(0.3, 0.4, 0.85), Vec3(0.95, 0.6, 0.2), Vec3(0.5, 0.8, 0.8)};
    const int tiles = 6;
    const double size = 0.4;
    const double top = -0.6;
    for (int a = 0; a < tiles; ++a) {
      for (int b = 0; b < tiles; ++b) {
        const Vec3 lo(-1.2 + a * size, top - 0.15, -1.2 + b * size);
        const Vec3 hi(lo.x() + size, top, lo.z() + size);
        scene.boxes.push_back({lo, hi, 60.0, palette[(a * 2 + b * 3) % 6] * 0.9});
      }
    }
    const double cube = 0.35;
    for (int k = 0; k < 8; ++k) {
      const Vec3 lo(-cube + cube * (k & 1), top + cube * ((k >> 1) & 1), -cube + cube * ((k >> 2) & 1));
      scene.boxes.push_back({lo, lo + Vec3::Constant(cube), 60.0, palette[(k + 1) % 6]});
    }
    scene.near = 2.0;
    scene.far = 6.5;
    scene.diameter = 3.4;
    scene.cameras = arc_cameras(9, 4.0, 30.0, 40.0, Vec3(0.0, -0.4, 0.0));
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected two-spheres or textured-box)");
  }
  scene.validate();
  return scene;
}

}  // namespace sfmnerf
