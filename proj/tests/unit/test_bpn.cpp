#include "bags/bpn.hpp"
#include "bags/ops.hpp"

#include "gradcheck.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace bags;
using bags::testing::check_gradients;

namespace {

Tensor random_image(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng, bool grad = false) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Real> v(c * h * w);
  for (Real& x : v) x = Real(u(rng));
  return Tensor::from({c, h, w}, std::move(v), grad);
}

Tensor random_depth(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(1, 4);
  std::vector<Real> v(h * w);
  for (Real& x : v) x = Real(u(rng));
  return Tensor::from({h, w}, std::move(v));
}

// Rows are random probability vectors.
Tensor random_kernels(std::size_t pixels, int k, std::mt19937_64& rng, bool grad = false) {
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t kk = std::size_t(k * k);
  std::vector<Real> v(pixels * kk);
  for (std::size_t p = 0; p < pixels; ++p) {
    double s = 0;
    for (std::size_t i = 0; i < kk; ++i) s += v[p * kk + i] = Real(u(rng));
    for (std::size_t i = 0; i < kk; ++i) v[p * kk + i] /= Real(s);
  }
  return Tensor::from({pixels, kk}, std::move(v), grad);
}

BpnConfig small_config() {
  BpnConfig c;
  c.feat_channels = 6;
  c.feat_out = 4;
  c.view_dim = 5;
  c.pos_freqs = 2;
  c.hidden = 8;
  return c;
}

void zero_parameter(BlurProposalNetwork& net, const std::string& name) {
  for (NamedParameter& p : net.parameters())
    if (p.name == name)
      for (Real& x : p.tensor->mutable_data()) x = 0;
}

}  // namespace

TEST(Bpn, ZeroHeadsGiveUniformKernelAndHalfMask) {
  Rng rng(1);
  BlurProposalNetwork net(3, small_config(), rng);
  net.grow_head(1, 5, rng);
  for (const char* name : {"blur1.weight", "blur1.bias", "mask.weight", "mask.bias"}) zero_parameter(net, name);
  std::mt19937_64 gen(2);
  const BlurField f = net.propose(random_image(3, 8, 8, gen), random_depth(8, 8, gen), 1, 1);
  ASSERT_EQ(f.kernels.shape(), (Shape{64, 25}));
  for (Real k : f.kernels.data()) EXPECT_NEAR(k, 1.0 / 25, 1e-15);
  for (Real m : f.mask.data()) EXPECT_EQ(m, 0.5);
}

TEST(Bpn, KernelsAreProbabilityVectorsAndMasksAreBounded) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng{std::uint64_t(trial)};
    BpnConfig cfg = small_config();
    cfg.head_init_range = 2.0;  // far from the near-delta start
    BlurProposalNetwork net(4, cfg, rng);
    net.grow_head(2, 3, rng);
    const BlurField f = net.propose(random_image(3, 6, 7, gen), random_depth(6, 7, gen), std::size_t(trial % 4), 2);
    for (std::size_t p = 0; p < 42; ++p) {
      double s = 0;
      for (std::size_t i = 0; i < 9; ++i) {
        EXPECT_GE(f.kernels[p * 9 + i], 0);
        s += f.kernels[p * 9 + i];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    for (Real m : f.mask.data()) {
      EXPECT_GE(m, 0);
      EXPECT_LE(m, 1);
    }
  }
}

TEST(Bpn, ProposeIsDeterministic) {
  Rng rng(4);
  BlurProposalNetwork net(2, small_config(), rng);
  net.grow_head(1, 3, rng);
  std::mt19937_64 gen(5);
  const Tensor c = random_image(3, 8, 8, gen), d = random_depth(8, 8, gen);
  const BlurField a = net.propose(c, d, 0, 1), b = net.propose(c, d, 0, 1);
  for (std::size_t i = 0; i < a.kernels.numel(); ++i) EXPECT_EQ(a.kernels[i], b.kernels[i]);
  for (std::size_t i = 0; i < a.mask.numel(); ++i) EXPECT_EQ(a.mask[i], b.mask[i]);
}

TEST(Bpn, ProposeRejectsUnknownViewAndMissingHead) {
  Rng rng(6);
  BlurProposalNetwork net(2, small_config(), rng);
  net.grow_head(1, 3, rng);
  std::mt19937_64 gen(7);
  const Tensor c = random_image(3, 8, 8, gen), d = random_depth(8, 8, gen);
  EXPECT_THROW(net.propose(c, d, 2, 1), std::invalid_argument);
  EXPECT_THROW(net.propose(c, d, 0, 2), std::invalid_argument);
}

TEST(Bpn, FeaturesRejectMismatchedDepth) {
  Rng rng(8);
  BlurProposalNetwork net(1, small_config(), rng);
  std::mt19937_64 gen(9);
  EXPECT_THROW(net.extract_features(random_image(3, 8, 8, gen), random_depth(8, 7, gen)), ShapeError);
  const Tensor f = net.extract_features(random_image(3, 8, 7, gen), random_depth(8, 7, gen));
  EXPECT_EQ(f.shape(), (Shape{4, 8, 7}));
  for (Real x : f.data()) EXPECT_GE(x, 0);
}

TEST(GrowHead, DefaultScheduleHeadSizes) {
  Rng rng(10);
  BlurProposalNetwork net(2, BpnConfig{}, rng);
  net.grow_head(3, 5, rng);
  net.grow_head(2, 9, rng);
  net.grow_head(1, 17, rng);
  ASSERT_EQ(net.heads().size(), 3u);
  EXPECT_EQ(net.head(3).weight.size(1), 25u);
  EXPECT_EQ(net.head(2).weight.size(1), 81u);
  EXPECT_EQ(net.head(1).weight.size(1), 289u);
}

TEST(GrowHead, RejectsDuplicateScaleAndEvenKernel) {
  Rng rng(11);
  BlurProposalNetwork net(2, small_config(), rng);
  net.grow_head(3, 5, rng);
  EXPECT_THROW(net.grow_head(3, 5, rng), std::invalid_argument);
  EXPECT_THROW(net.grow_head(2, 8, rng), std::invalid_argument);
}

TEST(GrowHead, OldHeadsAreUnchanged) {
  Rng rng(12);
  BlurProposalNetwork net(2, small_config(), rng);
  net.grow_head(2, 5, rng);
  std::mt19937_64 gen(13);
  const Tensor c = random_image(3, 8, 8, gen), d = random_depth(8, 8, gen);
  const BlurField before = net.propose(c, d, 1, 2);
  net.grow_head(1, 9, rng);
  const BlurField after = net.propose(c, d, 1, 2);
  for (std::size_t i = 0; i < before.kernels.numel(); ++i) EXPECT_EQ(before.kernels[i], after.kernels[i]);
  for (std::size_t i = 0; i < before.mask.numel(); ++i) EXPECT_EQ(before.mask[i], after.mask[i]);
}

TEST(GrowHead, FreshKernelIsNearDelta) {
  Rng rng(14);
  BlurProposalNetwork net(2, BpnConfig{}, rng);
  net.grow_head(1, 17, rng);
  std::mt19937_64 gen(15);
  const BlurField f = net.propose(random_image(3, 16, 16, gen), random_depth(16, 16, gen), 0, 1);
  for (std::size_t p = 0; p < 256; ++p) EXPECT_GT(f.kernels[p * 289 + 144], 0.9);
}

TEST(CenterLogitBias, GivesRequestedCenterMass) {
  for (int k : {3, 5, 9, 17}) {
    const double b = center_logit_bias(k, 0.95);
    EXPECT_NEAR(std::exp(b) / (std::exp(b) + (k * k - 1)), 0.95, 1e-12);
  }
  // A bare +3 logit is far from a delta once the window is large.
  EXPECT_LT(std::exp(3.0) / (std::exp(3.0) + 288), 0.07);
}

TEST(NormalizeDepth, MapsToUnitIntervalAndHandlesConstantDepth) {
  std::mt19937_64 gen(16);
  const Tensor n = normalize_depth(random_depth(10, 10, gen));
  double lo = 1, hi = 0;
  for (Real x : n.data()) {
    lo = std::min(lo, double(x));
    hi = std::max(hi, double(x));
  }
  EXPECT_EQ(lo, 0);
  EXPECT_EQ(hi, 1);
  const Tensor flat = normalize_depth(Tensor::full({4, 4}, 2.0));
  for (Real x : flat.data()) EXPECT_EQ(x, 0);
}

TEST(PositionalEmbedding, ShapeAndFirstFrequency) {
  const Tensor p = positional_embedding(4, 2, 3);
  ASSERT_EQ(p.shape(), (Shape{8, 12}));
  // Pixel (y=0, x=1): nx = 0.5, ny = -0.75.
  EXPECT_NEAR(p[12 + 0], std::sin(M_PI * 0.5), 1e-12);
  EXPECT_NEAR(p[12 + 3], std::cos(M_PI * -0.75), 1e-12);
  EXPECT_NEAR(p[12 + 4], std::sin(2 * M_PI * 0.5), 1e-12);
}

TEST(ApplyBlur, MatchesSixLoopOracle) {
  std::mt19937_64 gen(17);
  for (int k : {1, 3, 5, 7}) {
    const Tensor img = random_image(3, 9, 11, gen);
    const Tensor ker = random_kernels(99, k, gen);
    const Tensor out = apply_blur(img, ker, k);
    const auto ref = oracle::apply_blur(img, ker, k);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);
  }
}

TEST(ApplyBlur, DeltaKernelIsIdentityAndConstantsArePreserved) {
  std::mt19937_64 gen(18);
  const Tensor img = random_image(3, 6, 6, gen);
  std::vector<Real> delta(36 * 9, 0.0);
  for (std::size_t p = 0; p < 36; ++p) delta[p * 9 + 4] = 1;
  const Tensor out = apply_blur(img, Tensor::from({36, 9}, delta), 3);
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(out[i], img[i]);

  const Tensor flat = apply_blur(Tensor::full({3, 6, 6}, 0.4), random_kernels(36, 5, gen), 5);
  for (Real x : flat.data()) EXPECT_NEAR(x, 0.4, 1e-14);
}

TEST(ApplyBlur, CommutesWithChannelPermutation) {
  std::mt19937_64 gen(19);
  const Tensor img = random_image(3, 7, 7, gen);
  const Tensor ker = random_kernels(49, 3, gen);
  std::vector<Real> swapped(img.numel());
  const std::size_t perm[3] = {2, 0, 1};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 49; ++i) swapped[c * 49 + i] = img[perm[c] * 49 + i];
  const Tensor a = apply_blur(img, ker, 3);
  const Tensor b = apply_blur(Tensor::from({3, 7, 7}, swapped), ker, 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 49; ++i) EXPECT_EQ(b[c * 49 + i], a[perm[c] * 49 + i]);
}

TEST(ApplyBlur, InteriorIgnoresPixelsOutsideTheWindow) {
  std::mt19937_64 gen(20);
  const Tensor img = random_image(1, 9, 9, gen);
  const Tensor ker = random_kernels(81, 3, gen);
  std::vector<Real> edited(img.data().begin(), img.data().end());
  for (std::size_t x = 0; x < 9; ++x) edited[x] = 7;  // top row only
  const Tensor a = apply_blur(img, ker, 3);
  const Tensor b = apply_blur(Tensor::from({1, 9, 9}, edited), ker, 3);
  for (std::size_t y = 2; y < 9; ++y)
    for (std::size_t x = 0; x < 9; ++x) EXPECT_EQ(a[y * 9 + x], b[y * 9 + x]);
}

TEST(ApplyBlur, RejectsEvenKernelAndWrongShape) {
  std::mt19937_64 gen(21);
  const Tensor img = random_image(3, 4, 4, gen);
  EXPECT_THROW(apply_blur(img, random_kernels(16, 3, gen), 4), ShapeError);
  EXPECT_THROW(apply_blur(img, random_kernels(15, 3, gen), 3), ShapeError);
}

TEST(ApplyBlur, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(22);
  Tensor img = random_image(2, 5, 6, gen, true);
  Tensor ker = random_kernels(30, 3, gen, true);
  const Tensor w = random_image(2, 5, 6, gen);
  const auto r = check_gradients([&] { return sum(mul(apply_blur(img, ker, 3), w)); },
                                 {{"image", &img, {}}, {"kernels", &ker, {}}});
  EXPECT_LT(r.max_rel, 1e-6) << r.worst;
}

TEST(Blend, MaskEndpointsAndHalf) {
  const Tensor zero = Tensor::zeros({3, 2, 2}), one = Tensor::full({3, 2, 2}, 1.0);
  const Tensor clear = blend(zero, one, Tensor::zeros({2, 2}));
  const Tensor blurred = blend(zero, one, Tensor::full({2, 2}, 1.0));
  const Tensor half = blend(zero, one, Tensor::full({2, 2}, 0.5));
  for (Real x : clear.data()) EXPECT_EQ(x, 0);
  for (Real x : blurred.data()) EXPECT_EQ(x, 1);
  for (Real x : half.data()) EXPECT_EQ(x, 0.5);
  EXPECT_THROW(blend(zero, one, Tensor::zeros({2, 3})), ShapeError);
}

TEST(Bpn, EndToEndGradientsMatchFiniteDifferences) {
  Rng rng(23);
  BpnConfig cfg = small_config();
  cfg.head_init_range = 0.5;
  BlurProposalNetwork net(2, cfg, rng);
  net.grow_head(1, 3, rng);
  std::mt19937_64 gen(24);
  Tensor color = random_image(3, 6, 6, gen, true);
  const Tensor depth = random_depth(6, 6, gen);
  const Tensor target = random_image(3, 6, 6, gen);
  auto loss = [&] {
    const BlurField f = net.propose(color, depth, 1, 1);
    const Tensor out = blend(color, apply_blur(color, f), f.mask);
    return add(mean(square(sub(out, target))), mul_scalar(mean(f.mask), Real(0.1)));
  };
  std::vector<bags::testing::Leaf> leaves{{"color", &color, {}}};
  for (NamedParameter& p : net.parameters()) {
    std::vector<std::size_t> some;
    for (std::size_t i = 0; i < p.tensor->numel(); i += 7) some.push_back(i);
    leaves.push_back({p.name, p.tensor, some});
  }
  const auto r = check_gradients(loss, leaves, 1e-6, 1e-6);
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}
