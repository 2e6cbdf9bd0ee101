#pragma once

#include "bags/rng.hpp"
#include "bags/tensor.hpp"

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace bags {

struct BpnConfig {
  std::size_t feat_channels = 64;               // CNN hidden width
  std::size_t feat_out = 16;                    // CNN output channels
  std::array<std::size_t, 3> conv_kernels{5, 5, 3};
  std::size_t view_dim = 32;
  std::size_t pos_freqs = 6;                    // positional code uses 4 * freqs dims
  std::size_t hidden = 64;                      // base MLP width
  double head_init_range = 1e-4;                // uniform init of fresh blur heads
  double head_center_weight = 0.95;             // initial softmax mass at the kernel center
};

/// Per-pixel kernels and masks at one scale. `kernels` is [H*W x K*K] with
/// rows in raster order and each row a probability vector over the window
/// (row-major offsets, dy outer). `mask` is [H x W] in [0, 1].
struct BlurField {
  Tensor kernels;
  Tensor mask;
  int scale = 1;
  int kernel_size = 1;
  std::size_t height = 0, width = 0;
};

struct NamedParameter {
  std::string name;
  Tensor* tensor;
};

class BlurProposalNetwork {
 public:
  struct Head {
    int scale = 0;
    int kernel_size = 0;
    Tensor weight;  // hidden x K*K
    Tensor bias;    // K*K
  };

  BlurProposalNetwork() = default;
  BlurProposalNetwork(std::size_t num_views, const BpnConfig& config, Rng& rng);

  /// Appends a blur head for `scale`. Throws std::invalid_argument if the
  /// scale already has one or the kernel size is even.
  void grow_head(int scale, int kernel_size, Rng& rng);
  bool has_head(int scale) const;
  const Head& head(int scale) const;
  const std::vector<Head>& heads() const { return heads_; }

  /// CNN over color (3 x H x W) concatenated with normalized depth (H x W).
  Tensor extract_features(const Tensor& color, const Tensor& depth) const;

  /// Kernels and mask for training view `view` at `scale`.
  BlurField propose(const Tensor& color, const Tensor& depth, std::size_t view, int scale) const;

  std::size_t num_views() const { return view_table_.defined() ? view_table_.size(0) : 0; }
  const BpnConfig& config() const { return config_; }

  /// Every learnable tensor with a stable name (used for optimizer state
  /// and checkpoints).
  std::vector<NamedParameter> parameters();

  /// Rebuilds a network from named arrays, as written by parameters().
  static BlurProposalNetwork from_parameters(const BpnConfig& config, std::size_t num_views,
                                             const std::vector<std::pair<std::string, Tensor>>& named,
                                             const std::vector<std::pair<int, int>>& head_sizes);

 private:
  BpnConfig config_;
  std::array<Tensor, 3> conv_w_, conv_b_;
  Tensor view_table_;
  std::array<Tensor, 2> base_w_, base_b_;
  Tensor mask_w_, mask_b_;
  std::vector<Head> heads_;
};

/// Depth mapped to [0, 1] by its 2nd and 98th percentiles, clamped.
Tensor normalize_depth(const Tensor& depth);

/// [H*W x 4L] sinusoidal code of pixel centers normalized to [-1, 1]:
/// sin/cos(2^l pi x), sin/cos(2^l pi y) for l < L.
Tensor positional_embedding(std::size_t height, std::size_t width, std::size_t freqs);

/// Per-pixel convolution of a [C x H x W] image, one kernel per pixel shared
/// by all channels, replicate padding at the borders.
Tensor apply_blur(const Tensor& image, const Tensor& kernels, int kernel_size);
Tensor apply_blur(const Tensor& image, const BlurField& field);

/// (1 - m) C + m C_blur, with m [H x W] broadcast over channels.
Tensor blend(const Tensor& clear, const Tensor& blurred, const Tensor& mask);

/// Logit bias at the kernel center giving softmax mass `center_weight` when
/// all other logits are zero.
double center_logit_bias(int kernel_size, double center_weight);

}  // namespace bags
