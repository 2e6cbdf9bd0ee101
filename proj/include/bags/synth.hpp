#pragma once

#include "bags/scene.hpp"
#include "bags/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bags {

struct ToyScene {
  GaussianCloud cloud;
  std::vector<Camera> train_cameras;
  std::vector<Camera> test_cameras;
};

struct ToySceneConfig {
  std::size_t gaussians = 300;
  int views = 24;
  int resolution = 64;
  double ring_radius = 3.0;
};

/// Procedural cluster of Gaussians inside the unit sphere seen by a ring of
/// cameras looking at the origin. Test cameras sit halfway between training
/// cameras on the same ring. Throws if fewer than 10 Gaussians are requested.
ToyScene make_toy_scene(std::uint64_t seed, const ToySceneConfig& config = {});

/// Normalized anti-aliased line segment of `length` px at `angle` rad,
/// centered in an odd square grid.
Tensor motion_kernel(double angle, double length);

Tensor degrade_motion(const Tensor& image, double angle, double length);

/// Per-pixel isotropic Gaussian blur, sigma = gain * |depth - focus| clamped
/// to [0, 4]; sigma below 0.05 leaves the pixel untouched. Support is
/// truncated to 17x17.
Tensor degrade_defocus(const Tensor& image, const Tensor& depth, double focus_depth, double gain);

struct MixresResult {
  std::vector<Tensor> images;
  std::vector<int> factors;  // per view, one of 4, 3, 2, 1
};

/// Splits the views into four equal random parts, area-downscales them by
/// 4, 3, 2 and 1 and resizes back to native resolution.
MixresResult degrade_mixres(const std::vector<Tensor>& images, std::uint64_t seed);

enum class BlurKind { none, motion, defocus, mixres };

std::string to_string(BlurKind kind);
BlurKind parse_blur_kind(const std::string& text);

struct BlurSpec {
  BlurKind kind = BlurKind::none;
  double length = 6.0;                 // motion, px
  std::optional<double> angle;         // motion, rad; random per view when unset
  std::optional<double> focus_depth;   // defocus; nearest visible depth when unset
  std::optional<double> gain;          // defocus; derived from max_sigma when unset
  double max_sigma = 2.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthOptions {
  BlurSpec blur;
  ToySceneConfig scene;
  double seed_fraction = 0.2;   // of Gaussian centers written to points.ply
  double seed_jitter = 0.02;
};

/// Writes cameras.json, points.ply, train/, test/ and degradation.json.
void write_synthetic_dataset(const std::filesystem::path& dir, const SynthOptions& options);

}  // namespace bags
