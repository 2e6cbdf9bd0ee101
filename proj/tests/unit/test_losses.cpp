#include "bags/losses.hpp"
#include "bags/ops.hpp"

#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace bags;
using bags::testing::check_gradients;

namespace {

Tensor random_image(std::size_t h, std::size_t w, std::mt19937_64& rng, bool grad = false) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Real> v(3 * h * w);
  for (Real& x : v) x = Real(u(rng));
  return Tensor::from({3, h, w}, std::move(v), grad);
}

// Windowed SSIM computed directly per window position and channel.
double ssim_oracle(const Tensor& a, const Tensor& b, int win = 11, double sigma = 1.5) {
  const int c = int(a.size(0)), h = int(a.size(1)), w = int(a.size(2)), r = win / 2;
  std::vector<double> g(std::size_t(win * win));
  double gs = 0;
  for (int y = 0; y < win; ++y)
    for (int x = 0; x < win; ++x) gs += g[std::size_t(y * win + x)] = std::exp(-((y - r) * (y - r) + (x - r) * (x - r)) / (2 * sigma * sigma));
  for (double& v : g) v /= gs;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int count = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y0 = 0; y0 + win <= h; ++y0)
      for (int x0 = 0; x0 + win <= w; ++x0) {
        double ma = 0, mb = 0;
        for (int y = 0; y < win; ++y)
          for (int x = 0; x < win; ++x) {
            const std::size_t i = std::size_t((ch * h + y0 + y) * w + x0 + x);
            ma += g[std::size_t(y * win + x)] * a[i];
            mb += g[std::size_t(y * win + x)] * b[i];
          }
        double va = 0, vb = 0, cov = 0;
        for (int y = 0; y < win; ++y)
          for (int x = 0; x < win; ++x) {
            const std::size_t i = std::size_t((ch * h + y0 + y) * w + x0 + x);
            const double wt = g[std::size_t(y * win + x)];
            va += wt * (a[i] - ma) * (a[i] - ma);
            vb += wt * (b[i] - mb) * (b[i] - mb);
            cov += wt * (a[i] - ma) * (b[i] - mb);
          }
        total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / count;
}

}  // namespace

TEST(L1, Examples) {
  EXPECT_EQ(l1(Tensor::full({3, 4, 4}, 0.3), Tensor::full({3, 4, 4}, 0.3)).item(), 0);
  EXPECT_EQ(l1(Tensor::zeros({3, 4, 4}), Tensor::full({3, 4, 4}, 1.0)).item(), 1);
  EXPECT_THROW(l1(Tensor::zeros({3, 4, 4}), Tensor::zeros({3, 4, 5})), ShapeError);
}

TEST(L1, GradientIsSignOverCount) {
  std::mt19937_64 rng(1);
  Tensor a = random_image(4, 4, rng, true);
  const Tensor b = random_image(4, 4, rng);
  backward(l1(a, b));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double expected = (a[i] > b[i] ? 1.0 : -1.0) / double(a.numel());
    EXPECT_NEAR(a.grad()[i], expected, 1e-15);
  }
}

TEST(Ssim, MatchesDirectWindowOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor a = random_image(14, 17, rng), b = random_image(14, 17, rng);
    EXPECT_NEAR(ssim(a, b).item(), ssim_oracle(a, b), 1e-10);
  }
}

TEST(DSsim, IdenticalIsZeroAndSymmetric) {
  std::mt19937_64 rng(3);
  const Tensor a = random_image(12, 12, rng), b = random_image(12, 12, rng);
  EXPECT_NEAR(d_ssim(a, a).item(), 0, 1e-12);
  EXPECT_NEAR(d_ssim(a, b).item(), d_ssim(b, a).item(), 1e-14);
  const double v = d_ssim(a, b).item();
  EXPECT_GT(v, 0);
  EXPECT_LE(v, 1);
}

TEST(DSsim, ConstantZeroVersusConstantOneClosedForm) {
  // mu = 0 and 1, no variance: SSIM = C1 / (1 + C1).
  const double c1 = 1e-4;
  const double expected = (1 - c1 / (1 + c1)) / 2;
  EXPECT_NEAR(d_ssim(Tensor::zeros({3, 11, 11}), Tensor::full({3, 11, 11}, 1.0)).item(), expected, 1e-12);
}

TEST(DSsim, RejectsUndersizedImage) {
  EXPECT_THROW(d_ssim(Tensor::zeros({3, 10, 20}), Tensor::zeros({3, 10, 20})), ShapeError);
}

TEST(MaskSparsity, Examples) {
  EXPECT_EQ(mask_sparsity(Tensor::zeros({4, 4})).item(), 0);
  EXPECT_EQ(mask_sparsity(Tensor::full({4, 4}, 1.0)).item(), 1);
  EXPECT_EQ(mask_sparsity(Tensor::from({2, 2}, {0, 1, 1, 0})).item(), 0.5);
}

TEST(TotalLoss, ExamplesAndLinearityInMaskWeight) {
  std::mt19937_64 rng(4);
  const Tensor a = random_image(12, 12, rng), b = random_image(12, 12, rng);
  EXPECT_EQ(total_loss(a, a, Tensor::zeros({12, 12}), {}).total.item(), 0);
  EXPECT_NEAR(total_loss(a, b, Tensor(), {1, 0, 0}).total.item(), l1(a, b).item(), 1e-15);

  const Tensor m = Tensor::full({12, 12}, 0.25);
  const double base = total_loss(a, b, m, {0.8, 0.2, 0}).total.item();
  for (double lam : {0.01, 0.1, 1.0}) EXPECT_NEAR(total_loss(a, b, m, {0.8, 0.2, lam}).total.item(), base + 0.25 * lam, 1e-14);
  EXPECT_THROW(total_loss(a, b, m, {-1, 0, 0}), std::invalid_argument);
  EXPECT_THROW(total_loss(a, b, Tensor::zeros({12, 11}), {}), ShapeError);
}

TEST(TotalLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  Tensor a = random_image(12, 13, rng, true);
  const Tensor b = random_image(12, 13, rng);
  std::vector<Real> mv(12 * 13);
  for (Real& x : mv) x = Real(std::uniform_real_distribution<double>(0.1, 0.9)(rng));
  Tensor m = Tensor::from({12, 13}, mv, true);
  const auto r = check_gradients([&] { return total_loss(a, b, m, {}).total; },
                                 {{"image", &a, {}}, {"mask", &m, {}}}, 1e-7, 1e-8);
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Psnr, ClosedFormAndSentinel) {
  const Tensor a = Tensor::zeros({3, 4, 4}), b = Tensor::full({3, 4, 4}, 0.1);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);
  EXPECT_TRUE(is_psnr_sentinel(psnr(a, a)));
}

TEST(Psnr, MatchesDirectFormula) {
  std::mt19937_64 rng(6);
  const Tensor a = random_image(8, 8, rng), b = random_image(8, 8, rng);
  double se = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(psnr(a, b), -10 * std::log10(se / double(a.numel())), 1e-10);
}

TEST(Psnr, DecreasesWithNoiseAmplitude) {
  const std::vector<double> amplitudes{0.01, 0.03, 0.1, 0.3};
  std::vector<double> mean_psnr(amplitudes.size(), 0);
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(std::uint64_t(100 + seed));
    const Tensor clean = random_image(16, 16, rng);
    for (std::size_t k = 0; k < amplitudes.size(); ++k) {
      std::normal_distribution<double> noise(0, amplitudes[k]);
      std::vector<Real> v(clean.data().begin(), clean.data().end());
      for (Real& x : v) x += Real(noise(rng));
      mean_psnr[k] += psnr(clean, Tensor::from(clean.shape(), v)) / 10;
    }
  }
  for (std::size_t k = 1; k < amplitudes.size(); ++k) EXPECT_LT(mean_psnr[k], mean_psnr[k - 1]);
}
