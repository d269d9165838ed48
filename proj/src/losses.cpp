#include "sfmnerf/losses.hpp"

#include <cmath>
#include <cstdio>

#include "sfmnerf/error.hpp"

namespace sfmnerf {

double LossWeights::operator[](LossTerm term) const {
  switch (term) {
    case LossTerm::kRendering: return rendering;
    case LossTerm::kMatched3d: return matched_3d;
    case LossTerm::kPhotometric: return photometric;
    case LossTerm::kEpipolar: return epipolar;
    case LossTerm::kSsim: return ssim;
    case LossTerm::kDepthSmooth: return depth_smooth;
  }
  return 0.0;
}

double& LossWeights::operator[](LossTerm term) {
  switch (term) {
    case LossTerm::kRendering: return rendering;
    case LossTerm::kMatched3d: return matched_3d;
    case LossTerm::kPhotometric: return photometric;
    case LossTerm::kEpipolar: return epipolar;
    case LossTerm::kSsim: return ssim;
    case LossTerm::kDepthSmooth: return depth_smooth;
  }
  return rendering;
}

void LossWeights::validate() const {
  for (std::size_t i = 0; i < kLossTermCount; ++i) {
    const double w = (*this)[static_cast<LossTerm>(i)];
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError(std::string("loss weight lambda_") + kLossTermNames[i] +
                        " must be finite and nonnegative");
    }
  }
}

std::string LossReport::to_log_line(std::int64_t step) const {
  std::string line = "step=" + std::to_string(step);
  char buf[64];
  for (std::size_t i = 0; i < kLossTermCount; ++i) {
    std::snprintf(buf, sizeof(buf), " %s=%.9e", kLossTermNames[i], raw[i]);
    line += buf;
  }
  for (std::size_t i = 0; i < kLossTermCount; ++i) {
    std::snprintf(buf, sizeof(buf), " w_%s=%.9e", kLossTermNames[i], weighted[i]);
    line += buf;
  }
  std::snprintf(buf, sizeof(buf), " total=%.9e", total);
  line += buf;
  if (has_grad_norms) {
    for (std::size_t i = 0; i < kLossTermCount; ++i) {
      std::snprintf(buf, sizeof(buf), " g_%s=%.9e", kLossTermNames[i], grad_norm[i]);
      line += buf;
    }
  }
  line += " degenerate_rays=" + std::to_string(degenerate_rays) +
          " skipped_matches=" + std::to_string(skipped_matches) +
          " empty_epipolar=" + std::to_string(empty_epipolar) +
          " degenerate_baselines=" + std::to_string(degenerate_baselines) +
          " masked_pixels=" + std::to_string(masked_pixels) +
          " warp_invalid=" + std::to_string(warp_invalid) + " skipped=" + (skipped ? "1" : "0");
  return line;
}

ad::Var rendering_loss(const ad::Var& rendered, const Matrix& ground_truth) {
  if (rendered.rows() != ground_truth.rows() || rendered.cols() != ground_truth.cols()) {
    throw ShapeMismatchError("rendering_loss: rendered and ground truth differ in shape");
  }
  if (rendered.rows() == 0) {
    throw ShapeMismatchError("rendering_loss: no pixels");
  }
  const ad::Var gt = rendered.tape()->constant(ground_truth);
  return ad::scale(ad::sum(ad::square(rendered - gt)), 1.0 / static_cast<double>(rendered.rows()));
}

std::optional<ad::Var> matched_features_loss(const ad::Var& points_ref, const ad::Var& points_i,
                                             const ad::Var& points_j) {
  const Eigen::Index m = points_ref.rows();
  if (points_i.rows() != m || points_j.rows() != m || points_ref.cols() != 3 ||
      points_i.cols() != 3 || points_j.cols() != 3) {
    throw ShapeMismatchError("matched_features_loss: point lists must be equal-length Nx3");
  }
  if (m == 0) {
    return std::nullopt;
  }
  const ad::Var total = ad::sum(ad::square(points_ref - points_i)) +
                        ad::sum(ad::square(points_ref - points_j)) +
                        ad::sum(ad::square(points_i - points_j));
  return ad::scale(total, 1.0 / static_cast<double>(m));
}

std::optional<ad::Var> epipolar_loss(const ad::Var& x_ref, const ad::Var& candidates) {
  if (x_ref.rows() != 1 || x_ref.cols() != 3 || candidates.cols() != 3) {
    throw ShapeMismatchError("epipolar_loss: expected a 1x3 point and Kx3 candidates");
  }
  if (candidates.rows() == 0) {
    return std::nullopt;
  }
  const ad::Var dist = ad::row_sum(ad::square(candidates - x_ref));
  Eigen::Index best = 0;
  dist.value().col(0).minCoeff(&best);
  return ad::element(dist, best, 0);
}

ad::Var project_points(const ad::Var& points, const Intrinsics& cam, const Pose& pose,
                       std::vector<char>& in_front) {
  if (points.cols() != 3) {
    throw ShapeMismatchError("project_points: points must be Nx3");
  }
  ad::Tape& tape = *points.tape();
  Matrix rt = pose.r.transpose();
  Matrix t(1, 3);
  t.row(0) = pose.t.transpose();
  const ad::Var cam_pts = ad::affine(points, tape.constant(std::move(rt)), tape.constant(std::move(t)));
  const Matrix& cv = cam_pts.value();
  in_front.assign(static_cast<std::size_t>(cv.rows()), 0);
  for (Eigen::Index i = 0; i < cv.rows(); ++i) {
    in_front[static_cast<std::size_t>(i)] = cv(i, 2) > 1e-8 ? 1 : 0;
  }
  const ad::Var z = ad::clamp_min(ad::slice_cols(cam_pts, 2, 1), 1e-8);
  const ad::Var xy = ad::slice_cols(cam_pts, 0, 2) / z;
  Matrix focal(1, 2);
  focal << cam.fx, cam.fy;
  Matrix center(1, 2);
  center << cam.cx, cam.cy;
  return xy * tape.constant(std::move(focal)) + tape.constant(std::move(center));
}

ad::Var sample_image(const Image& img, const ad::Var& coords, std::span<const char> valid,
                     const Matrix& fill) {
  const Eigen::Index n = coords.rows();
  const int c = img.channels();
  if (coords.cols() != 2 || static_cast<Eigen::Index>(valid.size()) != n || fill.rows() != n ||
      fill.cols() != c) {
    throw ShapeMismatchError("sample_image: inconsistent shapes");
  }
  const Matrix& xy = coords.value();
  Matrix out(n, c);
  std::vector<BilinearStencil> stencils(static_cast<std::size_t>(n));
  std::vector<char> used(valid.begin(), valid.end());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec2 p(xy(i, 0), xy(i, 1));
    if (!used[static_cast<std::size_t>(i)] || !in_sampling_bounds(img.width(), img.height(), p)) {
      used[static_cast<std::size_t>(i)] = 0;
      out.row(i) = fill.row(i);
      continue;
    }
    const BilinearStencil s = bilinear_stencil(img.width(), img.height(), p);
    stencils[static_cast<std::size_t>(i)] = s;
    for (int k = 0; k < c; ++k) {
      out(i, k) = s.w00() * img.at(s.x0, s.y0, k) + s.w10() * img.at(s.x0 + 1, s.y0, k) +
                  s.w01() * img.at(s.x0, s.y0 + 1, k) + s.w11() * img.at(s.x0 + 1, s.y0 + 1, k);
    }
  }
  const int ic = coords.id();
  const Image* image = &img;
  return coords.tape()->record(
      std::move(out), {coords},
      [=, stencils = std::move(stencils), used = std::move(used)](ad::Tape& t, const Matrix& g) {
        Matrix gc = Matrix::Zero(n, 2);
        for (Eigen::Index i = 0; i < n; ++i) {
          if (!used[static_cast<std::size_t>(i)]) {
            continue;
          }
          const BilinearStencil& s = stencils[static_cast<std::size_t>(i)];
          for (int k = 0; k < c; ++k) {
            const double v00 = image->at(s.x0, s.y0, k);
            const double v10 = image->at(s.x0 + 1, s.y0, k);
            const double v01 = image->at(s.x0, s.y0 + 1, k);
            const double v11 = image->at(s.x0 + 1, s.y0 + 1, k);
            gc(i, 0) += g(i, k) * ((1.0 - s.fy) * (v10 - v00) + s.fy * (v11 - v01));
            gc(i, 1) += g(i, k) * ((1.0 - s.fx) * (v01 - v00) + s.fx * (v11 - v10));
          }
        }
        t.accumulate(ic, std::move(gc));
      });
}

WarpedPatch warp_patch(const SubPixelPatch& patch, const ad::Var& points, const WarpView& view,
                       std::span<const char> usable) {
  if (view.image == nullptr) {
    throw ConfigError("warp_patch: view has no image");
  }
  const auto n = static_cast<Eigen::Index>(patch.coords.size());
  if (points.rows() != n || static_cast<Eigen::Index>(usable.size()) != n) {
    throw ShapeMismatchError("warp_patch: one point per patch pixel expected");
  }
  std::vector<char> in_front;
  const ad::Var coords = project_points(points, view.cam, view.pose, in_front);
  WarpedPatch out;
  out.valid.resize(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < out.valid.size(); ++i) {
    out.valid[i] = in_front[i] && usable[i];
  }
  const Matrix& xy = coords.value();
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& v = out.valid[static_cast<std::size_t>(i)];
    if (v && !in_sampling_bounds(view.image->width(), view.image->height(), Vec2(xy(i, 0), xy(i, 1)))) {
      v = 0;
    }
    out.invalid += v ? 0 : 1;
  }
  out.colors = sample_image(*view.image, coords, out.valid, patch.colors);
  return out;
}

ad::Var photometric_reconstruction_loss(const SubPixelPatch& patch, const WarpedPatch& warped_i,
                                        const WarpedPatch& warped_j, const MaskRect& mask,
                                        int* masked_pixels) {
  const auto n = static_cast<Eigen::Index>(patch.coords.size());
  ad::Tape& tape = *warped_i.colors.tape();
  Matrix mask_i(n, 1);
  Matrix mask_j(n, 1);
  int masked = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const bool inside = contains(mask, patch.coords[static_cast<std::size_t>(k)]);
    masked += inside ? 0 : 1;
    mask_i(k, 0) = inside && warped_i.valid[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
    mask_j(k, 0) = inside && warped_j.valid[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
  }
  if (masked_pixels) {
    *masked_pixels = masked;
  }
  const ad::Var ref = tape.constant(patch.colors);
  const ad::Var li = ad::sum(ad::abs(ref - warped_i.colors) * tape.constant(std::move(mask_i)));
  const ad::Var lj = ad::sum(ad::abs(ref - warped_j.colors) * tape.constant(std::move(mask_j)));
  return li + lj;
}

ad::Var ssim(const ad::Var& a, const ad::Var& b, int height, int width) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeMismatchError("ssim: shapes differ");
  }
  const ad::Var mu_a = ad::box_filter3(a, height, width);
  const ad::Var mu_b = ad::box_filter3(b, height, width);
  const ad::Var mu_aa = mu_a * mu_a;
  const ad::Var mu_bb = mu_b * mu_b;
  const ad::Var mu_ab = mu_a * mu_b;
  const ad::Var var_a = ad::box_filter3(a * a, height, width) - mu_aa;
  const ad::Var var_b = ad::box_filter3(b * b, height, width) - mu_bb;
  const ad::Var cov = ad::box_filter3(a * b, height, width) - mu_ab;
  const ad::Var num = (2.0 * mu_ab + kSsimC1) * (2.0 * cov + kSsimC2);
  const ad::Var den = (mu_aa + mu_bb + kSsimC1) * (var_a + var_b + kSsimC2);
  return ad::mean(num / den);
}

bool patch_inside(const SubPixelPatch& patch, const MaskRect& mask) {
  for (const Vec2& p : patch.coords) {
    if (!contains(mask, p)) {
      return false;
    }
  }
  return true;
}

ad::Var ssim_loss(const SubPixelPatch& patch, const WarpedPatch& warped_i,
                  const WarpedPatch& warped_j, bool mask) {
  ad::Tape& tape = *warped_i.colors.tape();
  if (!mask) {
    return tape.constant(Matrix::Zero(1, 1));
  }
  const ad::Var ref = tape.constant(patch.colors);
  const ad::Var si = ssim(ref, warped_i.colors, patch.size, patch.size);
  const ad::Var sj = ssim(ref, warped_j.colors, patch.size, patch.size);
  // 1/2 * ((1 - si)/2 + (1 - sj)/2) = 1/2 - (si + sj)/4
  return ad::add_scalar(ad::scale(si + sj, -0.25), 0.5);
}

ad::Var depth_smooth_loss(const ad::Var& depth, const SubPixelPatch& patch) {
  const int s = patch.size;
  const auto n = static_cast<Eigen::Index>(s) * s;
  if (depth.rows() != n || depth.cols() != 1) {
    throw ShapeMismatchError("depth_smooth_loss: one depth per patch pixel expected");
  }
  ad::Tape& tape = *depth.tape();
  const Matrix& colors = patch.colors;
  const Eigen::Index c = colors.cols();
  Matrix wx(static_cast<Eigen::Index>(s) * (s - 1), 1);
  Matrix wy(static_cast<Eigen::Index>(s - 1) * s, 1);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x + 1 < s; ++x) {
      const double g = (colors.row(y * s + x + 1) - colors.row(y * s + x)).cwiseAbs().sum() / c;
      wx(y * (s - 1) + x, 0) = std::exp(-g);
    }
  }
  for (int y = 0; y + 1 < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double g = (colors.row((y + 1) * s + x) - colors.row(y * s + x)).cwiseAbs().sum() / c;
      wy(y * s + x, 0) = std::exp(-g);
    }
  }
  const ad::Var dx = ad::abs(ad::grid_diff_x(depth, s, s));
  const ad::Var dy = ad::abs(ad::grid_diff_y(depth, s, s));
  return ad::sum(dx * tape.constant(std::move(wx))) + ad::sum(dy * tape.constant(std::move(wy)));
}

TotalLoss total_loss(ad::Tape& tape,
                     const std::array<std::optional<ad::Var>, kLossTermCount>& parts,
                     const LossWeights& weights) {
  weights.validate();
  TotalLoss out;
  std::optional<ad::Var> total;
  for (std::size_t i = 0; i < kLossTermCount; ++i) {
    if (!parts[i]) {
      continue;
    }
    const double lambda = weights[static_cast<LossTerm>(i)];
    const double raw = parts[i]->scalar();
    out.report.present[i] = true;
    out.report.raw[i] = raw;
    out.report.weighted[i] = lambda * raw;
    if (lambda == 0.0) {
      continue;
    }
    const ad::Var term = ad::scale(*parts[i], lambda);
    total = total ? *total + term : term;
  }
  out.total = total ? *total : tape.constant(Matrix::Zero(1, 1));
  out.report.total = out.total.scalar();
  out.report.skipped = !total.has_value();
  return out;
}

}  // namespace sfmnerf
