#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sfmnerf/types.hpp"

namespace sfmnerf {

// Row-major image with 1 or 3 channels, values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }

  double& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c) const { return data_[index(x, y, c)]; }
  Color pixel(int x, int y) const;
  void set_pixel(int x, int y, const Color& color);

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  // Throws unless every value is finite and within [0, 1].
  void validate() const;

  // Crop of size w x h with top-left corner (x0, y0).
  Image crop(int x0, int y0, int w, int h) const;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

// Four-neighbour stencil of a continuous pixel coordinate. Weights are
// nonnegative and sum to one.
struct BilinearStencil {
  int x0 = 0;
  int y0 = 0;
  double fx = 0.0;  // fractional offset from x0, in [0, 1]
  double fy = 0.0;
  double w00() const { return (1.0 - fx) * (1.0 - fy); }
  double w10() const { return fx * (1.0 - fy); }
  double w01() const { return (1.0 - fx) * fy; }
  double w11() const { return fx * fy; }
};

bool in_sampling_bounds(int width, int height, const Vec2& p);
BilinearStencil bilinear_stencil(int width, int height, const Vec2& p);

// Throws OutOfBoundsError unless 0 <= x <= width-1 and 0 <= y <= height-1.
Color bilinear_sample(const Image& img, const Vec2& p);

struct SubPixelPatch {
  Eigen::Vector2i origin = Eigen::Vector2i::Zero();
  int size = 0;
  std::vector<Vec2> coords;  // row-major, size*size entries
  Matrix colors;             // one row per coordinate
};

using Rng = std::mt19937_64;

// Random patch with one independent offset in (0,1)^2 per pixel. Throws
// ConfigError when patch_size > min(width, height) - 1.
SubPixelPatch sample_subpixel_patch(const Image& img, int patch_size, Rng& rng);
// Same region selection at integer pixel positions (no offsets).
SubPixelPatch sample_integer_patch(const Image& img, int patch_size, Rng& rng);

// Mean SSIM over all 3x3 windows and channels.
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
double ssim(const Image& a, const Image& b);

// Sum over forward differences of |dD| * exp(-|dI|), where |dI| is the
// channel-averaged absolute color difference along the same axis.
double depth_smooth_term(const Matrix& depth, const Image& color);

struct MaskRect {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;
  bool operator==(const MaskRect&) const = default;
};

MaskRect mask_rect_from_matches(std::span<const Vec2> matches);
// Inclusive on every edge.
bool contains(const MaskRect& rect, const Vec2& p);

// PNG (8-bit) and PFM I/O.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

// Single-channel PFM maps are stored as height x width matrices, top row first.
Matrix read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Matrix& map);
void write_pfm(const std::string& path, const Image& img);

}  // namespace sfmnerf
