#pragma once

#include "bags/tensor.hpp"

#include <limits>

namespace bags {

struct LossWeights {
  double photo = 0.8;
  double dssim = 0.2;
  double mask = 0.001;

  void validate() const;
};

/// Mean absolute difference.
Tensor l1(const Tensor& a, const Tensor& b);

/// Mean SSIM of two [C x H x W] images in [0, 1] with an 11x11 Gaussian
/// window (sigma 1.5), evaluated where the window fits inside the image.
Tensor ssim(const Tensor& a, const Tensor& b, std::size_t window = 11, Real sigma = Real(1.5));

/// (1 - SSIM) / 2.
Tensor d_ssim(const Tensor& a, const Tensor& b, std::size_t window = 11, Real sigma = Real(1.5));

/// Mean of the mask (an L1 norm, entries are nonnegative).
Tensor mask_sparsity(const Tensor& mask);

struct LossTerms {
  Tensor total;
  Tensor l1;
  Tensor dssim;
  Tensor mask;
};

/// photo * l1 + dssim * d_ssim + mask * mean(m). An undefined mask counts as zero.
LossTerms total_loss(const Tensor& rendered, const Tensor& observed, const Tensor& mask,
                     const LossWeights& weights);

/// Peak signal-to-noise ratio for [0, 1] images; +inf for identical images.
double psnr(const Tensor& a, const Tensor& b);

inline bool is_psnr_sentinel(double v) { return v == std::numeric_limits<double>::infinity(); }

}  // namespace bags
