#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "sfmnerf/error.hpp"
#include "sfmnerf/image.hpp"

namespace sfmnerf {

Image read_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError("cannot read PNG " + path + ": " + png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&png);
    throw IoError("cannot decode PNG " + path + ": " + png.message);
  }
  const int channels = gray ? 1 : 3;
  Image img(static_cast<int>(png.width), static_cast<int>(png.height), channels);
  auto dst = img.data();
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    dst[i] = buffer[i] / 255.0;
  }
  return img;
}

void write_png(const std::string& path, const Image& img) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(img.data().size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const double v = std::clamp(img.data()[i], 0.0, 1.0);
    buffer[i] = static_cast<png_byte>(std::lround(v * 255.0));
  }
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path + ": " + png.message);
  }
}

namespace {

struct PfmData {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> values;  // top row first
};

float byteswap_float(float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
  return std::bit_cast<float>(bits);
}

void write_pfm_data(const std::string& path, const PfmData& pfm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write PFM " + path);
  }
  out << (pfm.channels == 3 ? "PF" : "Pf") << '\n'
      << pfm.width << ' ' << pfm.height << '\n'
      << "-1.0" << '\n';
  const std::size_t row_len = static_cast<std::size_t>(pfm.width) * pfm.channels;
  // PFM rows run bottom to top.
  for (int y = pfm.height - 1; y >= 0; --y) {
    for (std::size_t i = 0; i < row_len; ++i) {
      float v = pfm.values[y * row_len + i];
      if constexpr (std::endian::native == std::endian::big) {
        v = byteswap_float(v);
      }
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
}

PfmData read_pfm_data(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open PFM " + path);
  }
  std::string magic;
  PfmData pfm;
  double scale = 0.0;
  in >> magic >> pfm.width >> pfm.height >> scale;
  if (!in || (magic != "Pf" && magic != "PF") || pfm.width <= 0 || pfm.height <= 0 ||
      scale == 0.0) {
    throw IoError("malformed PFM header in " + path);
  }
  in.get();  // single whitespace byte before the payload
  pfm.channels = magic == "PF" ? 3 : 1;
  const bool little = scale < 0.0;
  const std::size_t row_len = static_cast<std::size_t>(pfm.width) * pfm.channels;
  pfm.values.resize(row_len * pfm.height);
  for (int y = pfm.height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(pfm.values.data() + y * row_len),
            static_cast<std::streamsize>(row_len * sizeof(float)));
  }
  if (!in) {
    throw IoError("truncated PFM payload in " + path);
  }
  if (little != (std::endian::native == std::endian::little)) {
    for (float& v : pfm.values) {
      v = byteswap_float(v);
    }
  }
  return pfm;
}

}  // namespace

Matrix read_pfm(const std::string& path) {
  const PfmData pfm = read_pfm_data(path);
  if (pfm.channels != 1) {
    throw IoError("expected a single-channel PFM in " + path);
  }
  Matrix map(pfm.height, pfm.width);
  for (int y = 0; y < pfm.height; ++y) {
    for (int x = 0; x < pfm.width; ++x) {
      map(y, x) = pfm.values[static_cast<std::size_t>(y) * pfm.width + x];
    }
  }
  return map;
}

void write_pfm(const std::string& path, const Matrix& map) {
  PfmData pfm{static_cast<int>(map.cols()), static_cast<int>(map.rows()), 1, {}};
  pfm.values.reserve(map.size());
  for (Eigen::Index y = 0; y < map.rows(); ++y) {
    for (Eigen::Index x = 0; x < map.cols(); ++x) {
      pfm.values.push_back(static_cast<float>(map(y, x)));
    }
  }
  write_pfm_data(path, pfm);
}

void write_pfm(const std::string& path, const Image& img) {
  PfmData pfm{img.width(), img.height(), img.channels(), {}};
  pfm.values.assign(img.data().begin(), img.data().end());
  write_pfm_data(path, pfm);
}

}  // namespace sfmnerf
