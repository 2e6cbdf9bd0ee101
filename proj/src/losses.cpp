#include "bags/losses.hpp"

#include "bags/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace bags {

void LossWeights::validate() const {
  if (photo < 0 || dssim < 0 || mask < 0) {
    throw std::invalid_argument("loss weights must be nonnegative");
  }
}

Tensor l1(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("l1", a.shape(), b.shape());
  return mean(abs(a - b));
}

Tensor ssim(const Tensor& a, const Tensor& b, std::size_t window, Real sigma) {
  if (a.shape() != b.shape()) throw ShapeError("ssim", a.shape(), b.shape());
  if (a.dim() != 3 || a.size(1) < window || a.size(2) < window) {
    throw ShapeError("ssim: image " + to_string(a.shape()) + " is smaller than the " +
                     std::to_string(window) + "x" + std::to_string(window) + " window");
  }
  const Real c1 = Real(0.01 * 0.01), c2 = Real(0.03 * 0.03);
  auto filt = [&](const Tensor& t) { return gaussian_filter_valid(t, window, sigma); };
  const Tensor mu_a = filt(a), mu_b = filt(b);
  const Tensor mu_aa = mu_a * mu_a, mu_bb = mu_b * mu_b, mu_ab = mu_a * mu_b;
  const Tensor var_a = filt(a * a) - mu_aa;
  const Tensor var_b = filt(b * b) - mu_bb;
  const Tensor cov = filt(a * b) - mu_ab;
  const Tensor num = (mu_ab * Real(2) + c1) * (cov * Real(2) + c2);
  const Tensor den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2);
  return mean(num / den);
}

Tensor d_ssim(const Tensor& a, const Tensor& b, std::size_t window, Real sigma) {
  return (-ssim(a, b, window, sigma) + Real(1)) * Real(0.5);
}

Tensor mask_sparsity(const Tensor& mask) {
  return mean(mask);
}

LossTerms total_loss(const Tensor& rendered, const Tensor& observed, const Tensor& mask,
                     const LossWeights& weights) {
  weights.validate();
  LossTerms t;
  t.l1 = l1(rendered, observed);
  t.dssim = d_ssim(rendered, observed);
  t.mask = mask.defined() ? mask_sparsity(mask) : Tensor::scalar(0);
  if (mask.defined() && (mask.dim() != 2 || rendered.dim() != 3 || mask.size(0) != rendered.size(1) ||
                         mask.size(1) != rendered.size(2))) {
    throw ShapeError("total_loss", rendered.shape(), mask.shape());
  }
  t.total = t.l1 * Real(weights.photo) + t.dssim * Real(weights.dssim) + t.mask * Real(weights.mask);
  return t;
}

double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("psnr", a.shape(), b.shape());
  double se = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    se += d * d;
  }
  const double mse = se / double(a.numel());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace bags
