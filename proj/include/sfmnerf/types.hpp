#pragma once

#include <Eigen/Core>

namespace sfmnerf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Dense row-major matrix used for batches (one row per ray, sample or pixel).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Pixel color with 1 or 3 channels, stored inline.
using Color = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1>;

}  // namespace sfmnerf
