#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sfmnerf/checkpoint.hpp"
#include "sfmnerf/config.hpp"
#include "sfmnerf/dataset.hpp"
#include "sfmnerf/error.hpp"
#include "sfmnerf/scene.hpp"
#include "sfmnerf/trainer.hpp"

namespace fs = std::filesystem;
using namespace sfmnerf;

namespace {

TrainConfig load_config(const std::string& path) {
  return path.empty() ? TrainConfig{} : TrainConfig::from_key_values(KeyValues::read(path));
}

TrainState load_state(const std::string& ckpt_path, TrainConfig& config) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  config.mlp = ckpt.coarse.config;
  return from_checkpoint(ckpt, config);
}

void print_eval(const EvalReport& r) {
  for (const ImageMetrics& m : r.images) {
    std::printf("image %d psnr %s ssim %.6f", m.index,
                m.psnr_infinite ? "inf" : std::to_string(m.psnr).c_str(), m.ssim);
    if (r.has_depth) {
      std::printf(" depth_rmse %.6f", m.depth_rmse);
    }
    std::printf("\n");
  }
  std::printf("mean psnr %s ssim %.6f", r.psnr_infinite ? "inf" : std::to_string(r.mean_psnr).c_str(),
              r.mean_ssim);
  if (r.has_depth) {
    std::printf(" depth_rmse %.6f", r.depth_rmse);
  }
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structure-constrained radiance field training"};
  app.require_subcommand(1);

  std::string data_dir, config_path, out_dir, ckpt_path, preset;
  std::int64_t seed = -1;
  std::int64_t steps = -1;
  int camera = 0;
  bool verbose = false;
  bool fresh = false;
  double sigma_px = 0.0;
  int supersample = 3;

  CLI::App* train = app.add_subcommand("train", "Train on a dataset directory");
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--config", config_path, "key=value training configuration");
  train->add_option("--seed", seed, "Overrides the configured seed");
  train->add_option("--steps", steps, "Overrides max_steps");
  train->add_option("--out", out_dir, "Run directory (default: DATA/run)");
  train->add_flag("--fresh", fresh, "Ignore an existing checkpoint");
  train->add_flag("-v,--verbose", verbose, "Progress on stderr");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("--data", data_dir, "Dataset directory")->required();
  eval->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--config", config_path, "key=value configuration (sample counts)");

  CLI::App* render = app.add_subcommand("render", "Render one dataset camera");
  render->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  render->add_option("--camera", camera, "Camera index")->required();
  render->add_option("--out", out_dir, "Output directory")->required();
  render->add_option("--data", data_dir, "Dataset directory providing the cameras")->required();
  render->add_option("--config", config_path, "key=value configuration (sample counts)");

  CLI::App* synth = app.add_subcommand("make-synthetic", "Write a synthetic dataset");
  synth->add_option("--preset", preset, "two-spheres or textured-box")
      ->required()
      ->check(CLI::IsMember({"two-spheres", "textured-box"}));
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--seed", seed, "Match sampling seed");
  synth->add_option("--sigma-px", sigma_px, "Gaussian pixel noise of the toy matches");
  synth->add_option("--supersample", supersample, "Anti-aliasing grid per pixel");

  CLI11_PARSE(app, argc, argv);
  tune_allocator();

  try {
    if (train->parsed()) {
      TrainConfig config = load_config(config_path);
      if (seed >= 0) {
        config.seed = static_cast<std::uint64_t>(seed);
      }
      if (steps >= 0) {
        config.max_steps = steps;
      }
      config.validate();
      const SceneDataset ds = load_dataset(data_dir);
      RunOptions opts;
      opts.out_dir = out_dir.empty() ? (fs::path(data_dir) / "run").string() : out_dir;
      opts.resume = !fresh;
      opts.verbose = verbose;
      const RunResult result = run_training(config, ds, opts);
      for (const std::string& w : result.warnings) {
        std::fprintf(stderr, "warning: %s\n", w.c_str());
      }
      print_eval(result.final_eval);
    } else if (eval->parsed()) {
      TrainConfig config = load_config(config_path);
      const TrainState state = load_state(ckpt_path, config);
      const SceneDataset ds = load_dataset(data_dir);
      print_eval(evaluate(state, ds, config));
    } else if (render->parsed()) {
      TrainConfig config = load_config(config_path);
      const TrainState state = load_state(ckpt_path, config);
      const SceneDataset ds = load_dataset(data_dir);
      if (camera < 0 || camera >= static_cast<int>(ds.size())) {
        throw ConfigError("camera index out of range");
      }
      const RenderedView view = render_view(state, ds.cameras[static_cast<std::size_t>(camera)],
                                            ds.near, ds.far, config);
      fs::create_directories(out_dir);
      char stem[32];
      std::snprintf(stem, sizeof(stem), "view_%03d", camera);
      write_png((fs::path(out_dir) / (std::string(stem) + ".png")).string(), view.color);
      write_pfm((fs::path(out_dir) / (std::string(stem) + "_depth.pfm")).string(), view.depth);
      write_pfm((fs::path(out_dir) / (std::string(stem) + "_opacity.pfm")).string(), view.opacity);
      std::printf("wrote %s\n", (fs::path(out_dir) / stem).string().c_str());
    } else if (synth->parsed()) {
      const SyntheticScene scene = make_preset(preset);
      SyntheticOptions opts;
      opts.seed = seed >= 0 ? static_cast<std::uint64_t>(seed) : 0;
      opts.sigma_px = sigma_px;
      opts.supersample = supersample;
      write_dataset(out_dir, make_synthetic_dataset(scene, opts));
      std::printf("wrote %s (%zu images)\n", out_dir.c_str(), scene.cameras.size());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
