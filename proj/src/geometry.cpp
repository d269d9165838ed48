#include "sfmnerf/geometry.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/Dense>

#include "sfmnerf/error.hpp"

namespace sfmnerf {

namespace {

constexpr double kPoseTolerance = 1e-9;
constexpr double kMinDepth = 1e-8;

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

}  // namespace

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ConfigError("intrinsics: focal lengths must be positive");
  }
  if (width < 2 || height < 2) {
    throw ConfigError("intrinsics: image must be at least 2x2");
  }
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw ConfigError("intrinsics: principal point outside the image");
  }
}

Mat3 Intrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Mat3 Intrinsics::inverse_matrix() const {
  Mat3 k;
  k << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return k;
}

void Pose::validate() const {
  if (!r.allFinite() || !t.allFinite()) {
    throw InvalidPoseError("pose has non-finite entries");
  }
  const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > kPoseTolerance) {
    throw InvalidPoseError("pose rotation is not orthonormal (residual " +
                           std::to_string(ortho) + ")");
  }
  if (std::abs(r.determinant() - 1.0) > kPoseTolerance) {
    throw InvalidPoseError("pose rotation has determinant != +1");
  }
}

Pose compose(const Pose& outer, const Pose& inner) {
  return {outer.r * inner.r, outer.r * inner.t + outer.t};
}

Pose relative_pose(const Pose& ref, const Pose& other) {
  ref.validate();
  other.validate();
  const Mat3 other_inv = other.r.transpose();
  return {other_inv * ref.r, other_inv * (ref.t - other.t)};
}

std::optional<Vec2> try_project(const Vec3& x, const Intrinsics& cam, const Pose& pose) {
  const Vec3 xc = pose.apply(x);
  if (!(xc.z() > kMinDepth)) {
    return std::nullopt;
  }
  return Vec2(cam.fx * xc.x() / xc.z() + cam.cx, cam.fy * xc.y() / xc.z() + cam.cy);
}

Vec2 project(const Vec3& x, const Intrinsics& cam, const Pose& pose) {
  auto p = try_project(x, cam, pose);
  if (!p) {
    throw BehindCameraError("point is behind the camera");
  }
  return *p;
}

Vec3 back_project(const Vec2& p, double depth, const Intrinsics& cam, const Pose& pose) {
  if (!(depth > 0.0)) {
    throw InvalidDepthError("back_project: depth must be positive");
  }
  const Vec3 xc((p.x() - cam.cx) / cam.fx * depth, (p.y() - cam.cy) / cam.fy * depth, depth);
  return pose.r.transpose() * (xc - pose.t);
}

Mat3 fundamental_matrix(const Intrinsics& ref_cam, const Intrinsics& other_cam, const Pose& rel) {
  if (rel.t.norm() <= 1e-12) {
    throw DegenerateBaselineError("fundamental matrix undefined for a zero baseline");
  }
  const Mat3 essential = skew(rel.t) * rel.r;
  Mat3 f = other_cam.inverse_matrix().transpose() * essential * ref_cam.inverse_matrix();
  return f / f.norm();
}

double epipolar_distance(const Vec3& line, const Vec2& p) {
  const double n = std::hypot(line.x(), line.y());
  return std::abs(line.x() * p.x() + line.y() * p.y() + line.z()) / n;
}

EpipolarCandidateSet epipolar_candidates(const Vec2& p_ref, const Image& ref_img,
                                         const Image& other_img, const Mat3& fundamental,
                                         double threshold) {
  if (!in_sampling_bounds(ref_img.width(), ref_img.height(), p_ref)) {
    throw OutOfBoundsError("epipolar_candidates: reference pixel outside the image");
  }
  EpipolarCandidateSet out;
  out.color_threshold = threshold;
  out.line = fundamental * Vec3(p_ref.x(), p_ref.y(), 1.0);
  const double a = out.line.x();
  const double b = out.line.y();
  const double c = out.line.z();
  if (std::hypot(a, b) < 1e-15) {
    return out;
  }
  const Color ref_color = bilinear_sample(ref_img, p_ref);
  const bool keep_all = threshold >= std::sqrt(3.0);
  const int w = other_img.width();
  const int h = other_img.height();

  auto consider = [&](const Vec2& q) {
    if (!in_sampling_bounds(w, h, q)) {
      return;
    }
    const double dist = (bilinear_sample(other_img, q) - ref_color).norm();
    if (keep_all || dist < threshold) {
      out.candidates.push_back(q);
      out.color_distances.push_back(dist);
    }
  };

  if (std::abs(b) >= std::abs(a)) {
    for (int x = 0; x < w; ++x) {
      consider(Vec2(x, -(a * x + c) / b));
    }
  } else {
    for (int y = 0; y < h; ++y) {
      consider(Vec2(-(b * y + c) / a, y));
    }
  }
  return out;
}

std::vector<PoseRecord> read_pose_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open pose file " + path);
  }
  std::vector<PoseRecord> records;
  std::string line;
  int line_no = 0;
  auto next_content_line = [&](std::string& out) {
    while (std::getline(in, out)) {
      ++line_no;
      const auto first = out.find_first_not_of(" \t\r");
      if (first != std::string::npos && out[first] != '#') {
        return true;
      }
    }
    return false;
  };
  auto read_numbers = [&](int count) {
    std::string text;
    if (!next_content_line(text)) {
      throw ParseError("pose file " + path + ": unexpected end of file", line_no);
    }
    std::istringstream ss(text);
    std::vector<double> values(count);
    for (double& v : values) {
      if (!(ss >> v)) {
        throw ParseError("pose file " + path + ": expected " + std::to_string(count) + " numbers",
                         line_no);
      }
    }
    return values;
  };

  while (next_content_line(line)) {
    PoseRecord rec;
    std::istringstream name(line);
    name >> rec.image;
    for (int row = 0; row < 3; ++row) {
      const auto v = read_numbers(4);
      for (int col = 0; col < 3; ++col) {
        rec.pose.r(row, col) = v[col];
      }
      rec.pose.t(row) = v[3];
    }
    const auto k = read_numbers(4);
    rec.fx = k[0];
    rec.fy = k[1];
    rec.cx = k[2];
    rec.cy = k[3];
    try {
      rec.pose.validate();
    } catch (const InvalidPoseError& e) {
      throw ParseError("pose file " + path + ": " + rec.image + ": " + e.what(), line_no);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_pose_file(const std::string& path, const std::vector<PoseRecord>& records) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write pose file " + path);
  }
  out << std::setprecision(17);
  for (const auto& rec : records) {
    out << rec.image << '\n';
    for (int row = 0; row < 3; ++row) {
      out << rec.pose.r(row, 0) << ' ' << rec.pose.r(row, 1) << ' ' << rec.pose.r(row, 2) << ' '
          << rec.pose.t(row) << '\n';
    }
    out << rec.fx << ' ' << rec.fy << ' ' << rec.cx << ' ' << rec.cy << '\n';
  }
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Pose pose;
  pose.r.row(0) = right.transpose();
  pose.r.row(1) = down.transpose();
  pose.r.row(2) = forward.transpose();
  pose.t = -pose.r * eye;
  return pose;
}

}  // namespace sfmnerf
