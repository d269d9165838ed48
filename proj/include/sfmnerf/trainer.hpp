#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sfmnerf/checkpoint.hpp"
#include "sfmnerf/config.hpp"
#include "sfmnerf/dataset.hpp"
#include "sfmnerf/field.hpp"
#include "sfmnerf/losses.hpp"
#include "sfmnerf/network.hpp"

namespace sfmnerf {

// Keeps freed buffers mapped (glibc) so the large per-step matrices reuse
// pages instead of faulting fresh ones in. No-op elsewhere.
void tune_allocator();

struct TrainConfig {
  LossWeights weights;
  MlpConfig mlp;
  int patch_size = 48;
  int n_coarse = 64;
  int n_fine = 64;
  double lr = 1e-3;
  std::int64_t max_steps = 20000;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 0;        // 0: only at the end
  std::int64_t checkpoint_every = 0;  // 0: only at the end
  double epipolar_threshold = kDefaultEpipolarThreshold;
  bool subpixel = true;
  bool perturb = true;
  int max_matches = 64;           // match triples rendered per step for L_3D
  int epipolar_matches = 16;      // reference points per step for L_epi
  int epipolar_candidates = 16;   // kept per view, lowest color distance first
  bool geometric_on_coarse = false;
  bool log_grad_norms = false;
  int eval_chunk = 1024;

  void validate() const;
  static TrainConfig from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
  RenderSettings render_settings(bool training) const;
};

struct TrainState {
  std::int64_t step = 0;
  MlpWeights coarse;
  MlpWeights fine;
  AdamState coarse_adam;
  AdamState fine_adam;
};

TrainState init_state(const TrainConfig& config);
Checkpoint to_checkpoint(const TrainState& state);
TrainState from_checkpoint(const Checkpoint& ckpt, const TrainConfig& config);

// Deterministic generator for one purpose (tag) at one counter value.
Rng make_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t counter);

struct StepGradients {
  MlpWeights coarse;
  MlpWeights fine;
};

// One optimization step on one triplet. Advances state.step; the Adam update
// is skipped when no loss term is present. When `grads` is given it receives
// the parameter gradients of the total loss.
LossReport train_step(TrainState& state, const SceneDataset& ds, const TrainTriplet& triplet,
                      const TrainConfig& config, StepGradients* grads = nullptr);

// Triplet index used at a given step: shuffled epochs over all triplets.
std::size_t triplet_for_step(std::int64_t step, std::size_t num_triplets, std::uint64_t seed);

struct ImageMetrics {
  int index = -1;
  double mse = 0.0;
  double psnr = 0.0;
  bool psnr_infinite = false;
  double ssim = 0.0;
  double depth_rmse = 0.0;
  std::int64_t depth_pixels = 0;
};

struct EvalReport {
  std::vector<ImageMetrics> images;
  double mean_psnr = 0.0;
  bool psnr_infinite = false;  // some image was reproduced exactly
  double mean_ssim = 0.0;
  double depth_rmse = 0.0;  // pooled over all test pixels with ground truth
  bool has_depth = false;

  std::string to_log_line(std::int64_t step) const;
};

double image_mse(const Image& a, const Image& b);
// -10 log10(mse); +infinity for mse == 0.
double psnr_from_mse(double mse);

struct RenderedView {
  Image color;
  Matrix depth;
  Matrix opacity;
};
RenderedView render_view(const TrainState& state, const SceneCamera& cam, double near, double far,
                         const TrainConfig& config);

EvalReport evaluate(const TrainState& state, const SceneDataset& ds, const TrainConfig& config);

struct RunOptions {
  std::string out_dir;
  bool resume = true;
  bool verbose = false;
};

struct RunResult {
  TrainState state;
  EvalReport final_eval;
  std::vector<std::string> warnings;
};

// Trains to config.max_steps, appending one line per step and one per
// evaluation to out_dir/metrics.log. Resumes from out_dir/checkpoint.bin
// when present.
RunResult run_training(const TrainConfig& config, const SceneDataset& ds, const RunOptions& options);

}  // namespace sfmnerf
