#pragma once

#include "bags/scene.hpp"
#include "bags/tensor.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace bags {

struct RasterConfig {
  double near_plane = 0.01;
  double dilation = 0.3;              // px^2 added to the 2-D covariance
  double alpha_cutoff = 1.0 / 255.0;  // contributions below this are skipped
  double min_transmittance = 1e-4;    // a pixel stops once T would drop below
  int tile_size = 16;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
};

/// A Gaussian after projection into one camera.
struct Projected2D {
  Eigen::Vector2d center;  // pixels
  Eigen::Matrix2d cov;     // pixels^2, dilated
  double depth = 0;        // camera-space z
  Eigen::Vector3d color;
  double opacity = 0;
  std::size_t source = 0;  // row in the GaussianCloud

  // Cached for compositing and the backward pass.
  Eigen::Vector3d conic;   // (A, B, C) of cov^-1
  double radius = 0;       // px; beyond it alpha * G < alpha_cutoff
  Eigen::Vector3d cam_mean;
};

struct ProjectStats {
  std::size_t culled_near = 0;
  std::size_t culled_offscreen = 0;
  std::size_t culled_transparent = 0;
};

/// Full EWA projection of every Gaussian. Output is in cloud order; culled
/// Gaussians are dropped and counted in `stats`.
std::vector<Projected2D> project(const GaussianCloud& cloud, const Camera& camera,
                                 const RasterConfig& config = {}, ProjectStats* stats = nullptr);

/// Stable ascending-depth sort; ties keep cloud order.
void sort_by_depth(std::vector<Projected2D>& projected);

/// Per-pixel color (3 x H x W), expected depth (H x W) and accumulated
/// opacity (H x W).
struct RenderOutput {
  Tensor color;
  Tensor depth;
  Tensor alpha;
};

/// Everything the backward pass needs from one forward rasterization.
struct RasterState {
  Camera camera;
  RasterConfig config;
  std::size_t cloud_size = 0;  // rows of the projected cloud; set by the caller of project()
  std::vector<Projected2D> projected;             // depth sorted
  std::vector<std::vector<std::uint32_t>> tiles;  // indices into `projected`
  int tiles_x = 0, tiles_y = 0;
};

/// Front-to-back alpha compositing over 16x16 tiles. `projected` must be
/// sorted by ascending depth (std::invalid_argument otherwise). When `state`
/// is non-null it receives what rasterize_backward needs.
RenderOutput rasterize(std::vector<Projected2D> projected, const Camera& camera,
                       const RasterConfig& config = {},
                       std::shared_ptr<RasterState>* state = nullptr);

/// Gradients of a scalar loss with respect to the cloud's parameter tensors,
/// each laid out like the tensor it belongs to.
struct CloudGradients {
  std::vector<double> positions, log_scales, rotations, opacity_logits, color_logits;
  /// |dL/d(mean2d)| in normalized device units, zero for culled Gaussians.
  std::vector<double> screen_grad_norm;
  std::vector<char> visible;
};

/// Analytic backward pass of rasterize() composed with project().
/// Throws std::invalid_argument if the gradient shapes or the cloud do not
/// match the saved state.
CloudGradients rasterize_backward(std::span<const Real> grad_color, std::span<const Real> grad_depth,
                                  std::span<const Real> grad_alpha, const RasterState& state,
                                  const GaussianCloud& cloud);

/// Receives screen-space gradient statistics when the graph is backpropagated.
struct ScreenGradSink {
  std::vector<double> screen_grad_norm;
  std::vector<char> visible;
};

/// Differentiable render: project, sort, rasterize, recorded on the graph
/// with rasterize_backward as its backward rule.
RenderOutput render(const GaussianCloud& cloud, const Camera& camera, const RasterConfig& config = {},
                    std::shared_ptr<ScreenGradSink> sink = nullptr);

/// Same images as render() without recording anything on the graph.
RenderOutput render_forward(const GaussianCloud& cloud, const Camera& camera, const RasterConfig& config = {});

/// Renders at the resolution of scale s (downsampling 2^(s-1), rounded up).
/// Throws std::invalid_argument if s < 1 or either side drops below 8 px.
RenderOutput render_at_scale(const GaussianCloud& cloud, const Camera& camera, int scale,
                             const RasterConfig& config = {},
                             std::shared_ptr<ScreenGradSink> sink = nullptr);

Camera camera_at_scale(const Camera& camera, int scale);

}  // namespace bags
