#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfmnerf/autodiff.hpp"
#include "sfmnerf/geometry.hpp"
#include "sfmnerf/image.hpp"

namespace sfmnerf {

enum class LossTerm { kRendering = 0, kMatched3d, kPhotometric, kEpipolar, kSsim, kDepthSmooth };
inline constexpr std::size_t kLossTermCount = 6;
inline constexpr std::array<const char*, kLossTermCount> kLossTermNames = {"ren", "3d",   "pr",
                                                                           "epi", "ssim", "ds"};

struct LossWeights {
  double rendering = 1.0;
  double matched_3d = 0.1;
  double photometric = 0.001;
  double epipolar = 0.0001;
  double ssim = 0.01;
  double depth_smooth = 0.001;

  double operator[](LossTerm term) const;
  double& operator[](LossTerm term);
  void validate() const;
};

struct LossReport {
  std::array<double, kLossTermCount> raw{};
  std::array<double, kLossTermCount> weighted{};
  std::array<bool, kLossTermCount> present{};
  double total = 0.0;
  // Norm of each weighted term's gradient over all network parameters.
  std::array<double, kLossTermCount> grad_norm{};
  bool has_grad_norms = false;

  int degenerate_rays = 0;       // accumulated opacity below the x_s threshold
  int skipped_matches = 0;       // matches dropped from L_3D
  int empty_epipolar = 0;        // reference points with no surviving candidate
  int degenerate_baselines = 0;  // view pairs without a fundamental matrix
  int masked_pixels = 0;         // patch pixels outside the match rectangle
  int warp_invalid = 0;          // warps behind the camera or outside the image
  bool skipped = false;          // no term contributed

  std::string to_log_line(std::int64_t step) const;
};

// Mean over rows of the squared color error.
ad::Var rendering_loss(const ad::Var& rendered, const Matrix& ground_truth);

// Mean over matches of |x_r - x_i|^2 + |x_r - x_j|^2 + |x_i - x_j|^2; each
// argument holds one row per match. Empty input yields nullopt.
std::optional<ad::Var> matched_features_loss(const ad::Var& points_ref, const ad::Var& points_i,
                                             const ad::Var& points_j);

// min_k |x_ref - candidate_k|^2 with the gradient routed to the minimizer.
// Empty candidate sets yield nullopt.
std::optional<ad::Var> epipolar_loss(const ad::Var& x_ref, const ad::Var& candidates);

// A view the reference patch can be warped into. The pose maps world points
// into this camera.
struct WarpView {
  const Image* image = nullptr;
  Intrinsics cam;
  Pose pose;
};

// Pixel coordinates of world points (N x 3) in a view, N x 2. Rows behind
// the camera are reported through `in_front` and carry no gradient.
ad::Var project_points(const ad::Var& points, const Intrinsics& cam, const Pose& pose,
                       std::vector<char>& in_front);

// Differentiable bilinear lookup of `img` at coords (N x 2). Rows whose
// `valid` flag is 0 return `fill` and no gradient.
ad::Var sample_image(const Image& img, const ad::Var& coords, std::span<const char> valid,
                     const Matrix& fill);

struct WarpedPatch {
  ad::Var colors;           // N x C; invalid rows hold the reference colors
  std::vector<char> valid;  // in front of the camera and inside the image
  int invalid = 0;
};

// Warps the predicted 3D point of every patch pixel into `view`. Rows with
// usable == 0 (degenerate rays) are treated as invalid.
WarpedPatch warp_patch(const SubPixelPatch& patch, const ad::Var& points, const WarpView& view,
                       std::span<const char> usable);

// Sum over patch pixels inside `mask` of the L1 color differences against
// both warped patches. Invalid warps contribute zero.
ad::Var photometric_reconstruction_loss(const SubPixelPatch& patch, const WarpedPatch& warped_i,
                                        const WarpedPatch& warped_j, const MaskRect& mask,
                                        int* masked_pixels = nullptr);

// Mean SSIM (3x3 windows, all channels) of two grids stored one row per cell.
ad::Var ssim(const ad::Var& a, const ad::Var& b, int height, int width);

// 1/2 * M * ((1 - SSIM_ri) / 2 + (1 - SSIM_rj) / 2).
ad::Var ssim_loss(const SubPixelPatch& patch, const WarpedPatch& warped_i,
                  const WarpedPatch& warped_j, bool mask);

// True when every patch coordinate lies inside the rectangle.
bool patch_inside(const SubPixelPatch& patch, const MaskRect& mask);

// Edge-aware depth smoothness over the patch grid (depth: N x 1).
ad::Var depth_smooth_loss(const ad::Var& depth, const SubPixelPatch& patch);

// Weighted sum of the present terms. Absent terms count as zero.
struct TotalLoss {
  ad::Var total;
  LossReport report;
};
TotalLoss total_loss(ad::Tape& tape,
                     const std::array<std::optional<ad::Var>, kLossTermCount>& parts,
                     const LossWeights& weights);

}  // namespace sfmnerf
