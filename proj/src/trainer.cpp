#include "sfmnerf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "sfmnerf/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fs = std::filesystem;

namespace sfmnerf {
namespace {

constexpr std::uint64_t kInitTag = 1;
constexpr std::uint64_t kStepTag = 2;
constexpr std::uint64_t kEpochTag = 3;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "lambda_ren",      "lambda_3d",           "lambda_pr",        "lambda_epi",
      "lambda_ssim",     "lambda_ds",           "mlp_depth",        "mlp_width",
      "mlp_skip",        "mlp_color_width",     "pos_freqs",        "dir_freqs",
      "density_activation", "patch_size",       "n_coarse",         "n_fine",
      "lr",              "max_steps",           "seed",             "eval_every",
      "checkpoint_every", "epipolar_threshold", "subpixel",         "perturb",
      "max_matches",     "epipolar_matches",    "epipolar_candidates", "geometric_on_coarse",
      "log_grad_norms",  "eval_chunk"};
  return keys;
}

std::vector<Eigen::Index> iota_rows(Eigen::Index start, Eigen::Index count) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(count));
  std::iota(rows.begin(), rows.end(), start);
  return rows;
}

double squared_grad_norm(const MlpBinding& b, const ad::Tape& tape) {
  double total = 0.0;
  for (std::size_t k = 0; k < b.weights.size(); ++k) {
    total += tape.grad(b.weights[k]).squaredNorm() + tape.grad(b.biases[k]).squaredNorm();
  }
  return total;
}

struct EpipolarGroup {
  Eigen::Index ref_row = 0;
  std::vector<Eigen::Index> candidate_rows;
};

// Adds two optional terms.
std::optional<ad::Var> combine(const std::optional<ad::Var>& a, const std::optional<ad::Var>& b) {
  if (!a) {
    return b;
  }
  if (!b) {
    return a;
  }
  return *a + *b;
}

}  // namespace

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

void TrainConfig::validate() const {
  weights.validate();
  mlp.validate();
  if (patch_size < 4) {
    throw ConfigError("patch_size must be at least 4");
  }
  if (n_coarse < 2 || n_fine < 2) {
    throw ConfigError("n_coarse and n_fine must be at least 2");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ConfigError("lr must be positive");
  }
  if (max_steps < 0 || eval_every < 0 || checkpoint_every < 0) {
    throw ConfigError("step counts must be nonnegative");
  }
  if (!(epipolar_threshold > 0.0)) {
    throw ConfigError("epipolar_threshold must be positive");
  }
  if (max_matches < 0 || epipolar_matches < 0 || epipolar_candidates < 1) {
    throw ConfigError("match budgets must be nonnegative and epipolar_candidates positive");
  }
  if (eval_chunk < 1) {
    throw ConfigError("eval_chunk must be positive");
  }
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  for (const auto& [key, value] : kv.values()) {
    if (!known_keys().count(key)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  TrainConfig c;
  c.weights.rendering = kv.get_double("lambda_ren", c.weights.rendering);
  c.weights.matched_3d = kv.get_double("lambda_3d", c.weights.matched_3d);
  c.weights.photometric = kv.get_double("lambda_pr", c.weights.photometric);
  c.weights.epipolar = kv.get_double("lambda_epi", c.weights.epipolar);
  c.weights.ssim = kv.get_double("lambda_ssim", c.weights.ssim);
  c.weights.depth_smooth = kv.get_double("lambda_ds", c.weights.depth_smooth);
  c.mlp.depth = static_cast<int>(kv.get_int("mlp_depth", c.mlp.depth));
  c.mlp.width = static_cast<int>(kv.get_int("mlp_width", c.mlp.width));
  c.mlp.skip_layer = static_cast<int>(kv.get_int("mlp_skip", c.mlp.skip_layer));
  c.mlp.color_width = static_cast<int>(kv.get_int("mlp_color_width", c.mlp.color_width));
  c.mlp.position.num_freqs = static_cast<int>(kv.get_int("pos_freqs", c.mlp.position.num_freqs));
  c.mlp.direction.num_freqs = static_cast<int>(kv.get_int("dir_freqs", c.mlp.direction.num_freqs));
  const std::string act = kv.get_string("density_activation", "softplus");
  if (act == "softplus") {
    c.mlp.density_activation = DensityActivation::kSoftplus;
  } else if (act == "relu") {
    c.mlp.density_activation = DensityActivation::kRelu;
  } else {
    throw ConfigError("density_activation must be softplus or relu");
  }
  c.patch_size = static_cast<int>(kv.get_int("patch_size", c.patch_size));
  c.n_coarse = static_cast<int>(kv.get_int("n_coarse", c.n_coarse));
  c.n_fine = static_cast<int>(kv.get_int("n_fine", c.n_fine));
  c.lr = kv.get_double("lr", c.lr);
  c.max_steps = kv.get_int("max_steps", c.max_steps);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.eval_every = kv.get_int("eval_every", c.eval_every);
  c.checkpoint_every = kv.get_int("checkpoint_every", c.checkpoint_every);
  c.epipolar_threshold = kv.get_double("epipolar_threshold", c.epipolar_threshold);
  c.subpixel = kv.get_bool("subpixel", c.subpixel);
  c.perturb = kv.get_bool("perturb", c.perturb);
  c.max_matches = static_cast<int>(kv.get_int("max_matches", c.max_matches));
  c.epipolar_matches = static_cast<int>(kv.get_int("epipolar_matches", c.epipolar_matches));
  c.epipolar_candidates =
      static_cast<int>(kv.get_int("epipolar_candidates", c.epipolar_candidates));
  c.geometric_on_coarse = kv.get_bool("geometric_on_coarse", c.geometric_on_coarse);
  c.log_grad_norms = kv.get_bool("log_grad_norms", c.log_grad_norms);
  c.eval_chunk = static_cast<int>(kv.get_int("eval_chunk", c.eval_chunk));
  c.validate();
  return c;
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv;
  kv.set("lambda_ren", fmt(weights.rendering));
  kv.set("lambda_3d", fmt(weights.matched_3d));
  kv.set("lambda_pr", fmt(weights.photometric));
  kv.set("lambda_epi", fmt(weights.epipolar));
  kv.set("lambda_ssim", fmt(weights.ssim));
  kv.set("lambda_ds", fmt(weights.depth_smooth));
  kv.set("mlp_depth", std::to_string(mlp.depth));
  kv.set("mlp_width", std::to_string(mlp.width));
  kv.set("mlp_skip", std::to_string(mlp.skip_layer));
  kv.set("mlp_color_width", std::to_string(mlp.color_width));
  kv.set("pos_freqs", std::to_string(mlp.position.num_freqs));
  kv.set("dir_freqs", std::to_string(mlp.direction.num_freqs));
  kv.set("density_activation",
         mlp.density_activation == DensityActivation::kSoftplus ? "softplus" : "relu");
  kv.set("patch_size", std::to_string(patch_size));
  kv.set("n_coarse", std::to_string(n_coarse));
  kv.set("n_fine", std::to_string(n_fine));
  kv.set("lr", fmt(lr));
  kv.set("max_steps", std::to_string(max_steps));
  kv.set("seed", std::to_string(seed));
  kv.set("eval_every", std::to_string(eval_every));
  kv.set("checkpoint_every", std::to_string(checkpoint_every));
  kv.set("epipolar_threshold", fmt(epipolar_threshold));
  kv.set("subpixel", subpixel ? "1" : "0");
  kv.set("perturb", perturb ? "1" : "0");
  kv.set("max_matches", std::to_string(max_matches));
  kv.set("epipolar_matches", std::to_string(epipolar_matches));
  kv.set("epipolar_candidates", std::to_string(epipolar_candidates));
  kv.set("geometric_on_coarse", geometric_on_coarse ? "1" : "0");
  kv.set("log_grad_norms", log_grad_norms ? "1" : "0");
  kv.set("eval_chunk", std::to_string(eval_chunk));
  return kv;
}

RenderSettings TrainConfig::render_settings(bool training) const {
  return {n_coarse, n_fine, training && perturb};
}

Rng make_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t counter) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(counter),
                    static_cast<std::uint32_t>(counter >> 32)};
  return Rng(seq);
}

TrainState init_state(const TrainConfig& config) {
  config.validate();
  Rng rng = make_rng(config.seed, kInitTag, 0);
  TrainState s;
  s.coarse = init_mlp(config.mlp, rng);
  s.fine = init_mlp(config.mlp, rng);
  s.coarse_adam = make_adam(s.coarse, config.lr);
  s.fine_adam = make_adam(s.fine, config.lr);
  return s;
}

Checkpoint to_checkpoint(const TrainState& state) {
  return {static_cast<std::uint64_t>(state.step), state.coarse, state.fine, state.coarse_adam,
          state.fine_adam};
}

TrainState from_checkpoint(const Checkpoint& ckpt, const TrainConfig& config) {
  if (!(ckpt.coarse.config == config.mlp) || !(ckpt.fine.config == config.mlp)) {
    throw ConfigError("checkpoint network shape differs from the configuration");
  }
  TrainState s;
  s.step = static_cast<std::int64_t>(ckpt.step);
  s.coarse = ckpt.coarse;
  s.fine = ckpt.fine;
  s.coarse_adam = ckpt.coarse_adam;
  s.fine_adam = ckpt.fine_adam;
  return s;
}

std::size_t triplet_for_step(std::int64_t step, std::size_t num_triplets, std::uint64_t seed) {
  if (num_triplets == 0) {
    throw ConfigError("no training triplets");
  }
  const auto n = static_cast<std::int64_t>(num_triplets);
  const std::int64_t epoch = step / n;
  std::vector<std::size_t> order(num_triplets);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, kEpochTag, static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order[static_cast<std::size_t>(step % n)];
}

LossReport train_step(TrainState& state, const SceneDataset& ds, const TrainTriplet& triplet,
                      const TrainConfig& config, StepGradients* grads) {
  const LossWeights& lw = config.weights;
  const auto ref_idx = static_cast<std::size_t>(triplet.ref);
  const Image& ref_img = ds.images.at(ref_idx);
  const SceneCamera& ref_cam = ds.cameras.at(ref_idx);
  const bool has_views = triplet.i >= 0 && triplet.j >= 0;
  Rng rng = make_rng(config.seed, kStepTag, static_cast<std::uint64_t>(state.step));

  const SubPixelPatch patch = config.subpixel
                                  ? sample_subpixel_patch(ref_img, config.patch_size, rng)
                                  : sample_integer_patch(ref_img, config.patch_size, rng);
  std::vector<Ray> rays;
  for (const Vec2& p : patch.coords) {
    rays.push_back(pixel_ray(p, ref_cam.intrinsics, ref_cam.pose, ds.near, ds.far));
  }
  const auto n_patch = static_cast<Eigen::Index>(rays.size());

  LossReport report;
  const bool need_3d = lw.matched_3d > 0.0 && has_views && !triplet.matches.empty();
  const bool need_epi = lw.epipolar > 0.0 && has_views && !triplet.matches.empty() &&
                        config.epipolar_matches > 0;
  const bool need_warp = (lw.photometric > 0.0 || lw.ssim > 0.0) && has_views;
  const bool need_ds = lw.depth_smooth > 0.0;

  // Match subset shared by L_3D and L_epi.
  std::vector<std::size_t> chosen;
  if (need_3d || need_epi) {
    chosen.resize(triplet.matches.size());
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    const std::size_t budget =
        std::max<std::size_t>(static_cast<std::size_t>(config.max_matches),
                              need_epi ? static_cast<std::size_t>(config.epipolar_matches) : 0);
    if (chosen.size() > budget) {
      std::shuffle(chosen.begin(), chosen.end(), rng);
      chosen.resize(budget);
    }
  }
  const SceneCamera* cam_i = has_views ? &ds.cameras.at(static_cast<std::size_t>(triplet.i)) : nullptr;
  const SceneCamera* cam_j = has_views ? &ds.cameras.at(static_cast<std::size_t>(triplet.j)) : nullptr;

  std::vector<std::array<Eigen::Index, 3>> match_rows;
  if (need_3d) {
    const std::size_t count = std::min(chosen.size(), static_cast<std::size_t>(config.max_matches));
    for (std::size_t k = 0; k < count; ++k) {
      const MatchTriple& m = triplet.matches[chosen[k]];
      const auto base = static_cast<Eigen::Index>(rays.size());
      rays.push_back(pixel_ray(m.ref, ref_cam.intrinsics, ref_cam.pose, ds.near, ds.far));
      rays.push_back(pixel_ray(m.i, cam_i->intrinsics, cam_i->pose, ds.near, ds.far));
      rays.push_back(pixel_ray(m.j, cam_j->intrinsics, cam_j->pose, ds.near, ds.far));
      match_rows.push_back({base, base + 1, base + 2});
    }
  }

  std::vector<EpipolarGroup> epi_groups;
  if (need_epi) {
    const SceneCamera* others[2] = {cam_i, cam_j};
    const Image* other_imgs[2] = {&ds.images.at(static_cast<std::size_t>(triplet.i)),
                                  &ds.images.at(static_cast<std::size_t>(triplet.j))};
    std::optional<Mat3> f[2];
    for (int v = 0; v < 2; ++v) {
      try {
        f[v] = fundamental_matrix(ref_cam.intrinsics, others[v]->intrinsics,
                                  relative_pose_from_global(ref_cam.pose, others[v]->pose));
      } catch (const DegenerateBaselineError&) {
        ++report.degenerate_baselines;
      }
    }
    const std::size_t count =
        std::min(chosen.size(), static_cast<std::size_t>(config.epipolar_matches));
    for (std::size_t k = 0; k < count; ++k) {
      const MatchTriple& m = triplet.matches[chosen[k]];
      Eigen::Index ref_row = -1;
      for (int v = 0; v < 2; ++v) {
        if (!f[v]) {
          continue;
        }
        EpipolarCandidateSet set =
            epipolar_candidates(m.ref, ref_img, *other_imgs[v], *f[v], config.epipolar_threshold);
        if (set.candidates.empty()) {
          ++report.empty_epipolar;
          continue;
        }
        std::vector<std::size_t> order(set.candidates.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        const std::size_t keep =
            std::min(order.size(), static_cast<std::size_t>(config.epipolar_candidates));
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                          order.end(), [&](std::size_t a, std::size_t b) {
                            return set.color_distances[a] < set.color_distances[b] ||
                                   (set.color_distances[a] == set.color_distances[b] && a < b);
                          });
        if (ref_row < 0) {
          ref_row = static_cast<Eigen::Index>(rays.size());
          rays.push_back(pixel_ray(m.ref, ref_cam.intrinsics, ref_cam.pose, ds.near, ds.far));
        }
        EpipolarGroup group;
        group.ref_row = ref_row;
        for (std::size_t q = 0; q < keep; ++q) {
          group.candidate_rows.push_back(static_cast<Eigen::Index>(rays.size()));
          rays.push_back(pixel_ray(set.candidates[order[q]], others[v]->intrinsics,
                                   others[v]->pose, ds.near, ds.far));
        }
        epi_groups.push_back(std::move(group));
      }
    }
  }

  ad::Tape tape;
  const MlpBinding cb = bind(state.coarse, tape);
  const MlpBinding fb = bind(state.fine, tape);
  const RenderOutputs out =
      render_rays(tape, cb, fb, config.mlp, rays, config.render_settings(true), &rng);

  const std::vector<Eigen::Index> patch_rows = iota_rows(0, n_patch);
  std::array<std::optional<ad::Var>, kLossTermCount> parts;
  auto& ren = parts[static_cast<std::size_t>(LossTerm::kRendering)];
  ren = rendering_loss(ad::gather_rows(out.fine.color, patch_rows), patch.colors) +
        rendering_loss(ad::gather_rows(out.coarse.color, patch_rows), patch.colors);

  std::vector<const RenderResult*> passes = {&out.fine};
  if (config.geometric_on_coarse) {
    passes.push_back(&out.coarse);
  }
  for (const RenderResult* pass : passes) {
    const Matrix& ws = pass->weight_sum.value();
    auto usable_row = [&](Eigen::Index r) { return !is_degenerate(ws(r, 0)); };
    const bool primary = pass == &out.fine;

    if (need_3d) {
      std::vector<Eigen::Index> r_rows, i_rows, j_rows;
      for (const auto& rows : match_rows) {
        if (usable_row(rows[0]) && usable_row(rows[1]) && usable_row(rows[2])) {
          r_rows.push_back(rows[0]);
          i_rows.push_back(rows[1]);
          j_rows.push_back(rows[2]);
        } else if (primary) {
          ++report.skipped_matches;
        }
      }
      if (!r_rows.empty()) {
        auto& slot = parts[static_cast<std::size_t>(LossTerm::kMatched3d)];
        slot = combine(slot, matched_features_loss(ad::gather_rows(pass->point, r_rows),
                                                   ad::gather_rows(pass->point, i_rows),
                                                   ad::gather_rows(pass->point, j_rows)));
      }
    }

    if (need_epi) {
      std::optional<ad::Var> sum;
      int groups = 0;
      for (const EpipolarGroup& g : epi_groups) {
        if (!usable_row(g.ref_row)) {
          continue;
        }
        std::vector<Eigen::Index> rows;
        for (Eigen::Index r : g.candidate_rows) {
          if (usable_row(r)) {
            rows.push_back(r);
          }
        }
        const Eigen::Index ref_row[1] = {g.ref_row};
        const auto term = rows.empty()
                              ? std::nullopt
                              : epipolar_loss(ad::gather_rows(pass->point, ref_row),
                                              ad::gather_rows(pass->point, rows));
        if (!term) {
          if (primary) {
            ++report.empty_epipolar;
          }
          continue;
        }
        sum = combine(sum, term);
        ++groups;
      }
      if (sum) {
        auto& slot = parts[static_cast<std::size_t>(LossTerm::kEpipolar)];
        slot = combine(slot, ad::scale(*sum, 1.0 / groups));
      }
    }

    if (need_warp) {
      std::vector<char> usable(static_cast<std::size_t>(n_patch));
      for (Eigen::Index r = 0; r < n_patch; ++r) {
        usable[static_cast<std::size_t>(r)] = usable_row(r) ? 1 : 0;
        if (primary && !usable_row(r)) {
          ++report.degenerate_rays;
        }
      }
      const ad::Var points = ad::gather_rows(pass->point, patch_rows);
      const WarpView view_i{&ds.images.at(static_cast<std::size_t>(triplet.i)), cam_i->intrinsics,
                            cam_i->pose};
      const WarpView view_j{&ds.images.at(static_cast<std::size_t>(triplet.j)), cam_j->intrinsics,
                            cam_j->pose};
      const WarpedPatch wi = warp_patch(patch, points, view_i, usable);
      const WarpedPatch wj = warp_patch(patch, points, view_j, usable);
      if (primary) {
        report.warp_invalid += wi.invalid + wj.invalid;
      }
      if (lw.photometric > 0.0) {
        int masked = 0;
        auto& slot = parts[static_cast<std::size_t>(LossTerm::kPhotometric)];
        slot = combine(slot, photometric_reconstruction_loss(patch, wi, wj, triplet.mask, &masked));
        if (primary) {
          report.masked_pixels += masked;
        }
      }
      if (lw.ssim > 0.0) {
        auto& slot = parts[static_cast<std::size_t>(LossTerm::kSsim)];
        slot = combine(slot, ssim_loss(patch, wi, wj, patch_inside(patch, triplet.mask)));
      }
    }

    if (need_ds) {
      auto& slot = parts[static_cast<std::size_t>(LossTerm::kDepthSmooth)];
      slot = combine(slot, depth_smooth_loss(ad::gather_rows(pass->depth, patch_rows), patch));
    }
  }

  TotalLoss total = total_loss(tape, parts, lw);
  const LossReport& assembled = total.report;
  report.raw = assembled.raw;
  report.weighted = assembled.weighted;
  report.present = assembled.present;
  report.total = assembled.total;
  report.skipped = assembled.skipped;

  if (config.log_grad_norms) {
    for (std::size_t k = 0; k < kLossTermCount; ++k) {
      const double lambda = lw[static_cast<LossTerm>(k)];
      if (!parts[k] || lambda == 0.0) {
        continue;
      }
      tape.backward(ad::scale(*parts[k], lambda));
      report.grad_norm[k] = std::sqrt(squared_grad_norm(cb, tape) + squared_grad_norm(fb, tape));
    }
    report.has_grad_norms = true;
  }

  if (!report.skipped && tape.requires_grad(total.total)) {
    tape.backward(total.total);
    MlpWeights gc = state.coarse.zeros_like();
    MlpWeights gf = state.fine.zeros_like();
    accumulate_gradients(cb, tape, gc);
    accumulate_gradients(fb, tape, gf);
    adam_step(state.coarse, gc, state.coarse_adam);
    adam_step(state.fine, gf, state.fine_adam);
    if (grads) {
      grads->coarse = std::move(gc);
      grads->fine = std::move(gf);
    }
  } else if (grads) {
    grads->coarse = state.coarse.zeros_like();
    grads->fine = state.fine.zeros_like();
  }
  ++state.step;
  return report;
}

double image_mse(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels()) {
    throw ShapeMismatchError("image_mse: images differ in shape");
  }
  const auto da = a.data();
  const auto db = b.data();
  double sum = 0.0;
  for (std::size_t k = 0; k < da.size(); ++k) {
    const double d = da[k] - db[k];
    sum += d * d;
  }
  return da.empty() ? 0.0 : sum / static_cast<double>(da.size());
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return -10.0 * std::log10(mse);
}

RenderedView render_view(const TrainState& state, const SceneCamera& cam, double near, double far,
                         const TrainConfig& config) {
  const int w = cam.intrinsics.width;
  const int h = cam.intrinsics.height;
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      rays.push_back(pixel_ray(Vec2(x, y), cam.intrinsics, cam.pose, near, far));
    }
  }
  const RenderValues v = render_values(state.coarse, state.fine, rays, config.render_settings(false),
                                       static_cast<std::size_t>(config.eval_chunk));
  RenderedView out{Image(w, h, 3), Matrix(h, w), Matrix(h, w)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Index r = static_cast<Eigen::Index>(y) * w + x;
      for (int c = 0; c < 3; ++c) {
        out.color.at(x, y, c) = std::clamp(v.color(r, c), 0.0, 1.0);
      }
      out.depth(y, x) = v.depth(r, 0);
      out.opacity(y, x) = v.weight_sum(r, 0);
    }
  }
  return out;
}

std::string EvalReport::to_log_line(std::int64_t step) const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "eval step=%lld psnr=%.9e ssim=%.9e",
                static_cast<long long>(step), mean_psnr, mean_ssim);
  std::string line = buf;
  if (has_depth) {
    std::snprintf(buf, sizeof(buf), " depth_rmse=%.9e", depth_rmse);
    line += buf;
  }
  for (const ImageMetrics& m : images) {
    std::snprintf(buf, sizeof(buf), " psnr_%d=%.9e ssim_%d=%.9e", m.index, m.psnr, m.index, m.ssim);
    line += buf;
  }
  return line;
}

EvalReport evaluate(const TrainState& state, const SceneDataset& ds, const TrainConfig& config) {
  if (ds.test.empty()) {
    throw ConfigError("evaluation needs a nonempty test split");
  }
  EvalReport report;
  report.has_depth = !ds.depths.empty();
  double depth_sq = 0.0;
  std::int64_t depth_count = 0;
  for (int idx : ds.test) {
    const auto k = static_cast<std::size_t>(idx);
    const RenderedView view = render_view(state, ds.cameras[k], ds.near, ds.far, config);
    ImageMetrics m;
    m.index = idx;
    m.mse = image_mse(view.color, ds.images[k]);
    m.psnr = psnr_from_mse(m.mse);
    m.psnr_infinite = std::isinf(m.psnr);
    m.ssim = ssim(view.color, ds.images[k]);
    if (report.has_depth) {
      const Matrix& gt = ds.depths[k];
      double sq = 0.0;
      for (Eigen::Index y = 0; y < gt.rows(); ++y) {
        for (Eigen::Index x = 0; x < gt.cols(); ++x) {
          if (gt(y, x) > 0.0) {
            const double d = view.depth(y, x) - gt(y, x);
            sq += d * d;
            ++m.depth_pixels;
          }
        }
      }
      m.depth_rmse = m.depth_pixels > 0 ? std::sqrt(sq / static_cast<double>(m.depth_pixels)) : 0.0;
      depth_sq += sq;
      depth_count += m.depth_pixels;
    }
    report.mean_psnr += m.psnr;
    report.mean_ssim += m.ssim;
    report.psnr_infinite = report.psnr_infinite || m.psnr_infinite;
    report.images.push_back(m);
  }
  report.mean_psnr /= static_cast<double>(report.images.size());
  report.mean_ssim /= static_cast<double>(report.images.size());
  report.depth_rmse = depth_count > 0 ? std::sqrt(depth_sq / static_cast<double>(depth_count)) : 0.0;
  return report;
}

namespace {

// Step number of a metrics line, or -1.
std::int64_t line_step(const std::string& line, bool& is_eval) {
  is_eval = line.rfind("eval ", 0) == 0;
  const auto pos = line.find("step=");
  if (pos == std::string::npos) {
    return -1;
  }
  return std::strtoll(line.c_str() + pos + 5, nullptr, 10);
}

void truncate_log(const fs::path& path, std::int64_t step) {
  std::vector<std::string> keep;
  {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      bool is_eval = false;
      const std::int64_t s = line_step(line, is_eval);
      if (s >= 0 && (is_eval ? s <= step : s < step)) {
        keep.push_back(line);
      }
    }
  }
  std::ofstream out(path, std::ios::trunc);
  for (const std::string& line : keep) {
    out << line << '\n';
  }
}

std::vector<TrainTriplet> reference_only_triplets(const SceneDataset& ds) {
  std::vector<TrainTriplet> out;
  for (int r : ds.train) {
    TrainTriplet t;
    t.ref = r;
    const Image& img = ds.images[static_cast<std::size_t>(r)];
    t.mask = {0, 0, img.width() - 1, img.height() - 1};
    out.push_back(t);
  }
  return out;
}

}  // namespace

RunResult run_training(const TrainConfig& config, const SceneDataset& ds, const RunOptions& options) {
  config.validate();
  if (options.out_dir.empty()) {
    throw ConfigError("run_training needs an output directory");
  }
  const fs::path dir(options.out_dir);
  fs::create_directories(dir);
  const fs::path log_path = dir / "metrics.log";
  const fs::path ckpt_path = dir / "checkpoint.bin";

  RunResult result;
  TripletSelection sel = build_triplets(ds, ds.matches);
  result.warnings = sel.warnings;
  std::vector<TrainTriplet> triplets = std::move(sel.triplets);
  if (triplets.empty()) {
    result.warnings.push_back("no matched triplets; training on reference images only");
    triplets = reference_only_triplets(ds);
  }
  if (triplets.empty()) {
    throw ConfigError("dataset has no training images");
  }

  TrainState& state = result.state;
  if (options.resume && fs::exists(ckpt_path)) {
    state = from_checkpoint(load_checkpoint(ckpt_path.string()), config);
    truncate_log(log_path, state.step);
  } else {
    state = init_state(config);
    std::ofstream(log_path, std::ios::trunc);
  }
  {
    std::ofstream cfg(dir / "config.txt", std::ios::trunc);
    cfg << config.to_key_values().to_string();
  }

  std::ofstream log(log_path, std::ios::app);
  if (!log) {
    throw IoError("cannot open " + log_path.string());
  }
  const bool ran = state.step < config.max_steps;
  while (state.step < config.max_steps) {
    const std::int64_t step = state.step;
    const TrainTriplet& t =
        triplets[triplet_for_step(step, triplets.size(), config.seed)];
    const LossReport report = train_step(state, ds, t, config);
    log << report.to_log_line(step) << '\n';
    if (options.verbose && (state.step % 100 == 0 || state.step == 1)) {
      std::fprintf(stderr, "step %lld total %.6f ren %.6f\n", static_cast<long long>(state.step),
                   report.total, report.raw[0]);
    }
    if (state.step < config.max_steps) {
      if (config.eval_every > 0 && state.step % config.eval_every == 0) {
        const EvalReport ev = evaluate(state, ds, config);
        log << ev.to_log_line(state.step) << '\n';
        if (options.verbose) {
          std::fprintf(stderr, "eval step %lld psnr %.3f ssim %.4f depth_rmse %.4f\n",
                       static_cast<long long>(state.step), ev.mean_psnr, ev.mean_ssim,
                       ev.depth_rmse);
        }
      }
      if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
        log.flush();
        save_checkpoint(ckpt_path.string(), to_checkpoint(state));
      }
    }
  }
  result.final_eval = evaluate(state, ds, config);
  if (ran) {
    log << result.final_eval.to_log_line(state.step) << '\n';
    log.flush();
    save_checkpoint(ckpt_path.string(), to_checkpoint(state));
  }
  return result;
}

}  // namespace sfmnerf
