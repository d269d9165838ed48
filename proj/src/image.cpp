#include "sfmnerf/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sfmnerf/error.hpp"

namespace sfmnerf {

Image::Image(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels) {
  if (width <= 0 || height <= 0 || (channels != 1 && channels != 3)) {
    throw ShapeMismatchError("image: invalid shape " + std::to_string(width) + "x" +
                             std::to_string(height) + "x" + std::to_string(channels));
  }
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

Color Image::pixel(int x, int y) const {
  Color c(channels_);
  for (int k = 0; k < channels_; ++k) {
    c(k) = at(x, y, k);
  }
  return c;
}

void Image::set_pixel(int x, int y, const Color& color) {
  for (int k = 0; k < channels_; ++k) {
    at(x, y, k) = color(k);
  }
}

void Image::validate() const {
  for (double v : data_) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ShapeMismatchError("image: value outside [0, 1]");
    }
  }
}

Image Image::crop(int x0, int y0, int w, int h) const {
  if (x0 < 0 || y0 < 0 || x0 + w > width_ || y0 + h > height_) {
    throw OutOfBoundsError("image crop outside bounds");
  }
  Image out(w, h, channels_);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels_; ++c) {
        out.at(x, y, c) = at(x0 + x, y0 + y, c);
      }
    }
  }
  return out;
}

bool in_sampling_bounds(int width, int height, const Vec2& p) {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width - 1.0 && p.y() <= height - 1.0;
}

BilinearStencil bilinear_stencil(int width, int height, const Vec2& p) {
  BilinearStencil s;
  s.x0 = std::clamp(static_cast<int>(std::floor(p.x())), 0, std::max(width - 2, 0));
  s.y0 = std::clamp(static_cast<int>(std::floor(p.y())), 0, std::max(height - 2, 0));
  s.fx = width > 1 ? p.x() - s.x0 : 0.0;
  s.fy = height > 1 ? p.y() - s.y0 : 0.0;
  return s;
}

Color bilinear_sample(const Image& img, const Vec2& p) {
  if (!in_sampling_bounds(img.width(), img.height(), p)) {
    throw OutOfBoundsError("bilinear_sample: coordinate outside the image");
  }
  const BilinearStencil s = bilinear_stencil(img.width(), img.height(), p);
  const int x1 = std::min(s.x0 + 1, img.width() - 1);
  const int y1 = std::min(s.y0 + 1, img.height() - 1);
  Color out(img.channels());
  for (int c = 0; c < img.channels(); ++c) {
    out(c) = s.w00() * img.at(s.x0, s.y0, c) + s.w10() * img.at(x1, s.y0, c) +
             s.w01() * img.at(s.x0, y1, c) + s.w11() * img.at(x1, y1, c);
  }
  return out;
}

namespace {

SubPixelPatch sample_patch(const Image& img, int patch_size, Rng& rng, bool subpixel) {
  if (patch_size < 1 || patch_size > std::min(img.width(), img.height()) - 1) {
    throw ConfigError("patch size " + std::to_string(patch_size) + " does not fit a " +
                      std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                      " image");
  }
  // Origins leave room for the offset so every coordinate stays < size - 1.
  std::uniform_int_distribution<int> ox(0, img.width() - 1 - patch_size);
  std::uniform_int_distribution<int> oy(0, img.height() - 1 - patch_size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto open_unit = [&] {
    double u = unit(rng);
    while (u <= 0.0) {
      u = unit(rng);
    }
    return u;
  };

  SubPixelPatch patch;
  patch.size = patch_size;
  patch.origin = Eigen::Vector2i(ox(rng), oy(rng));
  patch.coords.reserve(static_cast<std::size_t>(patch_size) * patch_size);
  patch.colors.resize(patch_size * patch_size, img.channels());
  for (int row = 0; row < patch_size; ++row) {
    for (int col = 0; col < patch_size; ++col) {
      Vec2 p(patch.origin.x() + col, patch.origin.y() + row);
      if (subpixel) {
        p.x() += open_unit();
        p.y() += open_unit();
      }
      patch.colors.row(static_cast<Eigen::Index>(patch.coords.size())) =
          bilinear_sample(img, p).transpose();
      patch.coords.push_back(p);
    }
  }
  return patch;
}

}  // namespace

SubPixelPatch sample_subpixel_patch(const Image& img, int patch_size, Rng& rng) {
  return sample_patch(img, patch_size, rng, true);
}

SubPixelPatch sample_integer_patch(const Image& img, int patch_size, Rng& rng) {
  return sample_patch(img, patch_size, rng, false);
}

double ssim(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels()) {
    throw ShapeMismatchError("ssim: patch shapes differ");
  }
  if (a.width() < 3 || a.height() < 3) {
    throw ShapeMismatchError("ssim: patches must be at least 3x3");
  }
  double total = 0.0;
  int count = 0;
  for (int c = 0; c < a.channels(); ++c) {
    for (int y = 1; y + 1 < a.height(); ++y) {
      for (int x = 1; x + 1 < a.width(); ++x) {
        double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const double va = a.at(x + dx, y + dy, c);
            const double vb = b.at(x + dx, y + dy, c);
            ma += va;
            mb += vb;
            maa += va * va;
            mbb += vb * vb;
            mab += va * vb;
          }
        }
        ma /= 9.0;
        mb /= 9.0;
        const double var_a = maa / 9.0 - ma * ma;
        const double var_b = mbb / 9.0 - mb * mb;
        const double cov = mab / 9.0 - ma * mb;
        total += ((2.0 * ma * mb + kSsimC1) * (2.0 * cov + kSsimC2)) /
                 ((ma * ma + mb * mb + kSsimC1) * (var_a + var_b + kSsimC2));
        ++count;
      }
    }
  }
  return total / count;
}

double depth_smooth_term(const Matrix& depth, const Image& color) {
  if (depth.rows() != color.height() || depth.cols() != color.width()) {
    throw ShapeMismatchError("depth_smooth_term: depth and color shapes differ");
  }
  const int h = color.height();
  const int w = color.width();
  auto color_step = [&](int x0, int y0, int x1, int y1) {
    double s = 0.0;
    for (int c = 0; c < color.channels(); ++c) {
      s += std::abs(color.at(x1, y1, c) - color.at(x0, y0, c));
    }
    return s / color.channels();
  };
  double total = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x + 1 < w; ++x) {
      total += std::abs(depth(y, x + 1) - depth(y, x)) * std::exp(-color_step(x, y, x + 1, y));
    }
  }
  for (int y = 0; y + 1 < h; ++y) {
    for (int x = 0; x < w; ++x) {
      total += std::abs(depth(y + 1, x) - depth(y, x)) * std::exp(-color_step(x, y, x, y + 1));
    }
  }
  return total;
}

MaskRect mask_rect_from_matches(std::span<const Vec2> matches) {
  if (matches.empty()) {
    throw ConfigError("mask_rect_from_matches: no matches");
  }
  double x_min = std::numeric_limits<double>::infinity();
  double y_min = x_min;
  double x_max = -x_min;
  double y_max = -x_min;
  for (const Vec2& p : matches) {
    x_min = std::min(x_min, p.x());
    y_min = std::min(y_min, p.y());
    x_max = std::max(x_max, p.x());
    y_max = std::max(y_max, p.y());
  }
  return {static_cast<int>(std::floor(x_min)), static_cast<int>(std::floor(y_min)),
          static_cast<int>(std::ceil(x_max)), static_cast<int>(std::ceil(y_max))};
}

bool contains(const MaskRect& rect, const Vec2& p) {
  return p.x() >= rect.x_min && p.x() <= rect.x_max && p.y() >= rect.y_min &&
         p.y() <= rect.y_max;
}

}  // namespace sfmnerf
