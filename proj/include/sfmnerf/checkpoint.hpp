#pragma once

#include <cstdint>
#include <string>

#include "sfmnerf/network.hpp"

namespace sfmnerf {

// Binary layout (little endian):
//   "SFMNERF\x01"                          8-byte magic
//   u64 training step
//   u32 network count (2: coarse, fine), then per network:
//     i32 depth, width, skip_layer, color_width, pos_freqs, dir_freqs,
//         pos_include, dir_include, density_activation
//     u32 layer count, per layer: u32 rows, u32 cols, f32 weight[rows*cols]
//         (row-major), f32 bias[cols]
//     adam: i64 step, f64 lr, beta1, beta2, epsilon, then per layer the first
//         and second moments as f32 weight[rows*cols], f32 bias[cols]
struct Checkpoint {
  std::uint64_t step = 0;
  MlpWeights coarse;
  MlpWeights fine;
  AdamState coarse_adam;
  AdamState fine_adam;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sfmnerf
