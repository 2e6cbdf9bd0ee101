#include "bags/trainer.hpp"

#include "bags/imaging.hpp"
#include "bags/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace bags {

void ScaleSchedule::validate() const {
  if (stages.empty()) throw std::invalid_argument("schedule has no stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const Stage& st = stages[i];
    const std::string where = "stage " + std::to_string(i) + " (scale " + std::to_string(st.scale) + ")";
    if (st.scale < 1) throw std::invalid_argument(where + ": scale must be >= 1");
    if (st.kernel_size < 1 || st.kernel_size % 2 == 0) {
      throw std::invalid_argument(where + ": kernel size " + std::to_string(st.kernel_size) + " must be odd");
    }
    const long footprint = static_cast<long>(st.kernel_size) << (st.scale - 1);
    if (footprint < 17 || footprint > 20) {
      throw std::invalid_argument(where + ": kernel " + std::to_string(st.kernel_size) + " covers " +
                                  std::to_string(footprint) + " full-resolution pixels, expected 17 to 20");
    }
    if (i > 0) {
      if (st.scale >= stages[i - 1].scale) throw std::invalid_argument(where + ": scales must strictly decrease");
      if (st.kernel_size <= stages[i - 1].kernel_size) {
        throw std::invalid_argument(where + ": kernel sizes must strictly increase");
      }
    }
  }
}

std::size_t ScaleSchedule::total_iterations() const {
  std::size_t n = 0;
  for (const Stage& s : stages) n += s.iterations;
  return n;
}

std::size_t ScaleSchedule::stage_begin(std::size_t stage) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < stage && i < stages.size(); ++i) n += stages[i].iterations;
  return n;
}

std::size_t ScaleSchedule::stage_of(std::size_t iter) const {
  std::size_t end = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    end += stages[i].iterations;
    if (iter < end) return i;
  }
  return stages.empty() ? 0 : stages.size() - 1;
}

void DensifyConfig::validate() const {
  if (!(grad_threshold > 0) || !(split_scale_threshold > 0) || !(opacity_prune > 0) || interval == 0) {
    throw std::invalid_argument("densification thresholds and interval must be positive");
  }
  if (!(stop_fraction >= 0 && stop_fraction <= 1)) {
    throw std::invalid_argument("densification stop fraction must lie in [0, 1]");
  }
}

void TrainConfig::validate() const {
  schedule.validate();
  weights.validate();
  densify.validate();
  for (double lr : {lr.position_init, lr.position_final, lr.scale, lr.rotation, lr.opacity, lr.color, lr.bpn}) {
    if (!(lr >= 0)) throw std::invalid_argument("learning rates must be >= 0");
  }
}

void DensifyStats::reset(std::size_t n) {
  grad_sum.assign(n, 0.0);
  count.assign(n, 0);
}

void DensifyStats::accumulate(const ScreenGradSink& sink) {
  const std::size_t n = std::min(grad_sum.size(), sink.visible.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (!sink.visible[i]) continue;
    grad_sum[i] += sink.screen_grad_norm[i];
    ++count[i];
  }
}

double camera_extent(const std::vector<Camera>& cameras) {
  if (cameras.empty()) return 1;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const Camera& c : cameras) mean += c.center();
  mean /= double(cameras.size());
  double r = 0;
  for (const Camera& c : cameras) r = std::max(r, (c.center() - mean).norm());
  return r > 0 ? 1.1 * r : 1.0;
}

std::vector<Tensor> observations_at_scale(const std::vector<Tensor>& images, int scale) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const Tensor& img : images) out.push_back(downsample(img, 1 << (scale - 1)));
  return out;
}

namespace {

constexpr std::array<std::size_t, kCloudGroups> kRowWidth{3, 3, 4, 1, 3};

void reshuffle(TrainState& state, std::size_t views) {
  state.epoch_order.resize(views);
  std::iota(state.epoch_order.begin(), state.epoch_order.end(), 0u);
  std::shuffle(state.epoch_order.begin(), state.epoch_order.end(), state.view_rng);
  state.epoch_pos = 0;
}

std::size_t next_view(TrainState& state, std::size_t views) {
  if (state.epoch_order.size() != views || state.epoch_pos >= views) reshuffle(state, views);
  return state.epoch_order[state.epoch_pos++];
}

Rng head_rng(std::uint64_t seed, int scale) {
  return make_rng(seed, "bpn.head" + std::to_string(scale));
}

}  // namespace

TrainState init_training(const Dataset& data, const TrainConfig& config) {
  config.validate();
  const std::size_t views = data.train_cameras.size();
  if (views < 2) throw std::invalid_argument("training needs at least 2 views, got " + std::to_string(views));
  if (data.train_images.size() != views) {
    throw std::invalid_argument("training images (" + std::to_string(data.train_images.size()) +
                                ") do not match cameras (" + std::to_string(views) + ")");
  }
  for (std::size_t v = 0; v < views; ++v) {
    const Camera& c = data.train_cameras[v];
    const Tensor& img = data.train_images[v];
    if (img.dim() != 3 || img.size(1) != std::size_t(c.height) || img.size(2) != std::size_t(c.width)) {
      throw std::invalid_argument("image for view " + std::to_string(v) + " is " + to_string(img.shape()) +
                                  ", camera expects " + std::to_string(c.height) + "x" + std::to_string(c.width));
    }
  }
  TrainState state;
  state.cloud = init_from_points(data.points.points, data.points.colors, config.init);
  for (std::size_t g = 0; g < kCloudGroups; ++g) {
    state.cloud_adam[g].resize(state.cloud.size() * kRowWidth[g]);
  }
  if (config.use_bpn) {
    Rng rng = make_rng(config.seed, "bpn");
    state.bpn.emplace(views, config.bpn, rng);
  }
  state.view_rng = make_rng(config.seed, "views");
  state.densify_rng = make_rng(config.seed, "densify");
  state.stats.reset(state.cloud.size());
  state.scene_extent = camera_extent(data.train_cameras);
  return state;
}

DensifyReport densify_and_prune(GaussianCloud& cloud, DensifyStats& stats, const DensifyConfig& config,
                                Rng& rng, std::array<AdamState, kCloudGroups>* adam) {
  const std::size_t n = cloud.size();
  std::array<std::span<const Real>, kCloudGroups> src{cloud.positions.data(), cloud.log_scales.data(),
                                                      cloud.rotations.data(), cloud.opacity_logits.data(),
                                                      cloud.color_logits.data()};
  std::array<std::vector<Real>, kCloudGroups> dst;
  std::vector<long> origin;  // old row per new row, -1 for fresh rows
  DensifyReport report;

  auto copy_row = [&](std::size_t row) {
    for (std::size_t g = 0; g < kCloudGroups; ++g) {
      const std::size_t w = kRowWidth[g];
      dst[g].insert(dst[g].end(), src[g].begin() + row * w, src[g].begin() + (row + 1) * w);
    }
  };

  std::vector<char> selected(n, 0);
  std::size_t growth = 0;
  for (std::size_t i = 0; i < n && i < stats.count.size(); ++i) {
    if (stats.count[i] == 0) continue;
    if (stats.grad_sum[i] / stats.count[i] > config.grad_threshold) {
      selected[i] = 1;
      ++growth;
    }
  }
  if (n + growth > config.max_gaussians) std::fill(selected.begin(), selected.end(), 0);

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::size_t> appended;  // rows added after the originals
  std::vector<char> removed(n, 0);
  // Originals first, then clones and split children, so surviving rows keep
  // their relative order.
  for (std::size_t i = 0; i < n; ++i) {
    if (!selected[i]) continue;
    const Eigen::Vector3d s = cloud.scale(i);
    if (s.maxCoeff() <= config.split_scale_threshold) {
      appended.push_back(i);
      ++report.cloned;
    } else {
      removed[i] = 1;
      appended.push_back(i);
      appended.push_back(i);
      ++report.split;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    copy_row(i);
    origin.push_back(static_cast<long>(i));
  }
  for (std::size_t k = 0; k < appended.size(); ++k) {
    const std::size_t i = appended[k];
    copy_row(i);
    origin.push_back(-1);
    if (!removed[i]) continue;
    // Split child: position drawn from the parent's distribution, scales shrunk.
    const std::size_t row = origin.size() - 1;
    const Eigen::Vector3d s = cloud.scale(i);
    const Eigen::Vector3d z(normal(rng), normal(rng), normal(rng));
    const Eigen::Vector3d offset = quaternion_to_matrix(cloud.quaternion(i)) * s.cwiseProduct(z);
    for (int a = 0; a < 3; ++a) {
      dst[kPositions][3 * row + a] += Real(offset[a]);
      dst[kScales][3 * row + a] = Real(std::log(s[a] / 1.6));
    }
  }

  // Prune near-transparent Gaussians.
  const Real prune_logit = Real(logit(config.opacity_prune));
  std::array<std::vector<Real>, kCloudGroups> kept;
  std::vector<long> kept_origin;
  const std::size_t m = origin.size();
  for (std::size_t r = 0; r < m; ++r) {
    if (dst[kOpacity][r] < prune_logit) {
      ++report.pruned;
      continue;
    }
    for (std::size_t g = 0; g < kCloudGroups; ++g) {
      const std::size_t w = kRowWidth[g];
      kept[g].insert(kept[g].end(), dst[g].begin() + r * w, dst[g].begin() + (r + 1) * w);
    }
    kept_origin.push_back(origin[r]);
  }
  if (kept_origin.empty() && n > 0) {
    std::cerr << "warning: every Gaussian fell below the opacity floor; the cloud is empty\n";
  }

  if (report.cloned || report.split || report.pruned) {
    cloud = GaussianCloud::from_values(std::move(kept[kPositions]), std::move(kept[kScales]),
                                       std::move(kept[kRotations]), std::move(kept[kOpacity]),
                                       std::move(kept[kColor]));
    if (adam) {
      for (std::size_t g = 0; g < kCloudGroups; ++g) (*adam)[g].remap_rows(kept_origin, kRowWidth[g]);
    }
  }
  stats.reset(cloud.size());
  return report;
}

void upscale_transition(TrainState& state, const TrainConfig& config, std::size_t stage) {
  if (stage >= config.schedule.stages.size()) {
    throw std::out_of_range("no schedule entry for stage " + std::to_string(stage));
  }
  if (!state.bpn) return;
  const Stage& st = config.schedule.stages[stage];
  if (state.bpn->has_head(st.scale)) return;
  Rng rng = head_rng(config.seed, st.scale);
  state.bpn->grow_head(st.scale, st.kernel_size, rng);
}

namespace {

void step_cloud(TrainState& state, const TrainConfig& config, std::size_t total) {
  const double spatial = config.lr.scale_position_by_extent ? state.scene_extent : 1.0;
  const std::array<double, kCloudGroups> rates{
      double(exponential_lr(Real(config.lr.position_init * spatial), Real(config.lr.position_final * spatial),
                            state.iteration, total)),
      config.lr.scale, config.lr.rotation, config.lr.opacity, config.lr.color};
  auto params = state.cloud.parameters();
  for (std::size_t g = 0; g < kCloudGroups; ++g) {
    Tensor& t = *params[g];
    if (t.numel() == 0 || !t.has_grad()) continue;
    AdamConfig cfg;
    cfg.lr = Real(rates[g]);
    adam_step(t.mutable_data(), t.grad(), state.cloud_adam[g], cfg);
    t.zero_grad();
  }
  state.cloud.normalize_rotations();
}

void step_bpn(TrainState& state, const TrainConfig& config) {
  if (!state.bpn) return;
  AdamConfig cfg;
  cfg.lr = Real(config.lr.bpn);
  cfg.eps = Real(1e-8);
  for (NamedParameter& p : state.bpn->parameters()) {
    if (!p.tensor->has_grad()) continue;
    adam_step(p.tensor->mutable_data(), p.tensor->grad(), state.bpn_adam[p.name], cfg);
    p.tensor->zero_grad();
  }
}

}  // namespace

void train(TrainState& state, const Dataset& data, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  const ScaleSchedule& sched = config.schedule;
  const std::size_t total = sched.total_iterations();
  const std::size_t views = data.train_cameras.size();
  int cached_scale = 0;
  std::vector<Tensor> observed;
  std::size_t prepared_stage = sched.stages.size();

  while (state.iteration < total) {
    const std::size_t stage_idx = sched.stage_of(state.iteration);
    const Stage& stage = sched.stages[stage_idx];
    if (prepared_stage != stage_idx) {
      upscale_transition(state, config, stage_idx);
      prepared_stage = stage_idx;
    }
    if (cached_scale != stage.scale) {
      observed = observations_at_scale(data.train_images, stage.scale);
      cached_scale = stage.scale;
    }
    const std::size_t in_stage = state.iteration - sched.stage_begin(stage_idx);
    const std::size_t view = next_view(state, views);
    try {
      auto sink = std::make_shared<ScreenGradSink>();
      RenderOutput out = render_at_scale(state.cloud, data.train_cameras[view], stage.scale, {}, sink);
      Tensor prediction = out.color;
      Tensor mask;
      const bool blur_active = state.bpn && !(config.warmup && in_stage < sched.warmup_iters);
      const bool kernels_only =
          blur_active && config.warmup && in_stage < sched.warmup_iters + sched.kernel_warmup_iters;
      if (blur_active) {
        const Tensor color_in = config.detach_bpn_inputs ? out.color.detach() : out.color;
        const Tensor depth_in = config.detach_bpn_inputs ? out.depth.detach() : out.depth;
        BlurField field = state.bpn->propose(color_in, depth_in, view, stage.scale);
        if (kernels_only) {
          prediction = apply_blur(out.color, field);
        } else {
          prediction = blend(out.color, apply_blur(out.color, field), field.mask);
          mask = field.mask;
        }
      }
      LossTerms loss = total_loss(prediction, observed[view], mask, config.weights);
      backward(loss.total);
      state.stats.accumulate(*sink);
      step_cloud(state, config, total);
      step_bpn(state, config);
      state.log.push_back({state.iteration + 1, stage.scale, double(loss.l1.item()), double(loss.dssim.item()),
                           mask.defined() ? double(loss.mask.item()) : kernels_only ? 1.0 : 0.0,
                           double(loss.total.item())});
    } catch (const std::exception& e) {
      throw std::runtime_error("training failed at iteration " + std::to_string(state.iteration + 1) + " (view " +
                               std::to_string(view) + "): " + e.what());
    }
    ++state.iteration;

    const std::size_t done_in_stage = in_stage + 1;
    const auto densify_until =
        static_cast<std::size_t>(std::floor(double(stage.iterations) * (1.0 - config.densify.stop_fraction)));
    if (config.densify_enabled && done_in_stage % config.densify.interval == 0 && done_in_stage <= densify_until) {
      densify_and_prune(state.cloud, state.stats, config.densify, state.densify_rng, &state.cloud_adam);
    }
    if (hooks.after_iteration && !hooks.after_iteration(state)) break;
  }
}

double mean_mask(const TrainState& state, const Dataset& data, const TrainConfig& config) {
  if (!state.bpn || config.schedule.stages.empty()) return 0;
  const int scale = config.schedule.stages.back().scale;
  if (!state.bpn->has_head(scale)) return 0;
  double sum = 0;
  for (std::size_t v = 0; v < data.train_cameras.size(); ++v) {
    RenderOutput out = render_forward(state.cloud, camera_at_scale(data.train_cameras[v], scale));
    BlurField field = state.bpn->propose(out.color, out.depth, v, scale);
    auto m = field.mask.data();
    double s = 0;
    for (Real x : m) s += double(x);
    sum += s / double(m.size());
  }
  return sum / double(data.train_cameras.size());
}

std::string loss_csv(const std::vector<LossRecord>& log) {
  std::string out = "iter,scale,l1,dssim,mask,total\n";
  char line[160];
  for (const LossRecord& r : log) {
    std::snprintf(line, sizeof line, "%zu,%d,%.9g,%.9g,%.9g,%.9g\n", r.iter, r.scale, r.l1, r.dssim, r.mask,
                  r.total);
    out += line;
  }
  return out;
}

}  // namespace bags
