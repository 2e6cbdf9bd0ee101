#pragma once

#include "bags/bpn.hpp"
#include "bags/dataset.hpp"
#include "bags/losses.hpp"
#include "bags/optim.hpp"
#include "bags/rasterizer.hpp"
#include "bags/rng.hpp"
#include "bags/scene.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bags {

struct Stage {
  int scale = 1;
  int kernel_size = 17;
  std::size_t iterations = 0;
};

struct ScaleSchedule {
  std::vector<Stage> stages{{3, 5, 10000}, {2, 9, 10000}, {1, 17, 20000}};
  std::size_t warmup_iters = 500;         // per stage, blur heads off
  std::size_t kernel_warmup_iters = 300;  // then kernels alone: mask forced to 1, no sparsity term

  /// Throws std::invalid_argument unless scales strictly decrease, kernel
  /// sizes are odd and strictly increase, and every kernel covers 17 to 20
  /// full-resolution pixels.
  void validate() const;
  std::size_t total_iterations() const;
  /// Stage holding global iteration `iter` (the last stage once past the end).
  std::size_t stage_of(std::size_t iter) const;
  std::size_t stage_begin(std::size_t stage) const;
};

struct DensifyConfig {
  double grad_threshold = 1e-3;       // mean screen-space position gradient, NDC units
  double split_scale_threshold = 0.03;  // world units; larger Gaussians split, smaller clone
  double opacity_prune = 0.005;
  std::size_t interval = 100;
  double stop_fraction = 0.2;         // no densification in this tail of each stage
  std::size_t max_gaussians = 20000;

  void validate() const;
};

struct LearningRates {
  double position_init = 1.6e-4;
  double position_final = 1.6e-6;
  double scale = 5e-3;
  double rotation = 1e-3;
  double opacity = 5e-2;
  double color = 2.5e-2;
  double bpn = 1e-3;
  bool scale_position_by_extent = true;  // position rates are in units of the camera spread
};

struct TrainConfig {
  ScaleSchedule schedule;
  LossWeights weights;
  LearningRates lr;
  DensifyConfig densify;
  BpnConfig bpn;
  InitConfig init;
  std::uint64_t seed = 0;
  bool use_bpn = true;
  bool warmup = true;
  bool densify_enabled = true;
  bool detach_bpn_inputs = false;

  void validate() const;
};

struct LossRecord {
  std::size_t iter = 0;
  int scale = 0;
  double l1 = 0, dssim = 0, mask = 0, total = 0;
};

/// Screen-space gradient statistics accumulated between densification passes.
struct DensifyStats {
  std::vector<double> grad_sum;
  std::vector<std::uint32_t> count;

  void reset(std::size_t n);
  void accumulate(const ScreenGradSink& sink);
};

enum CloudGroup : std::size_t { kPositions, kScales, kRotations, kOpacity, kColor, kCloudGroups };

struct TrainState {
  GaussianCloud cloud;
  std::optional<BlurProposalNetwork> bpn;
  std::array<AdamState, kCloudGroups> cloud_adam;
  std::map<std::string, AdamState> bpn_adam;
  std::size_t iteration = 0;  // completed iterations
  Rng view_rng;
  Rng densify_rng;
  std::vector<std::uint32_t> epoch_order;
  std::size_t epoch_pos = 0;
  DensifyStats stats;
  double scene_extent = 1;
  std::vector<LossRecord> log;
};

/// Seeds the cloud from the dataset points and builds a fresh network
/// (unless disabled). Throws std::invalid_argument with fewer than 2 views
/// or images that do not match their cameras.
TrainState init_training(const Dataset& data, const TrainConfig& config);

/// Radius of the camera centers around their mean, times 1.1.
double camera_extent(const std::vector<Camera>& cameras);

/// Training images area-downsampled for `scale`.
std::vector<Tensor> observations_at_scale(const std::vector<Tensor>& images, int scale);

struct DensifyReport {
  std::size_t cloned = 0, split = 0, pruned = 0;
};

/// Clones small and splits large Gaussians whose mean screen gradient
/// exceeds the threshold, then prunes near-transparent ones. Optimizer
/// moments follow their rows; new rows start at zero. Stats are reset.
DensifyReport densify_and_prune(GaussianCloud& cloud, DensifyStats& stats, const DensifyConfig& config,
                                Rng& rng, std::array<AdamState, kCloudGroups>* adam = nullptr);

/// Prepares `stage`: grows its blur head if the network lacks one.
void upscale_transition(TrainState& state, const TrainConfig& config, std::size_t stage);

struct TrainHooks {
  /// Called after each iteration; return false to stop early.
  std::function<bool(const TrainState&)> after_iteration;
};

/// Runs from state.iteration up to the schedule's total.
void train(TrainState& state, const Dataset& data, const TrainConfig& config, const TrainHooks& hooks = {});

/// Mean of the mask the network predicts for every training view at the
/// finest scale; 0 without a network.
double mean_mask(const TrainState& state, const Dataset& data, const TrainConfig& config);

std::string loss_csv(const std::vector<LossRecord>& log);

}  // namespace bags
