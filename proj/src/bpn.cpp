#include "bags/bpn.hpp"

#include "bags/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace bags {
namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = Real(dist(rng));
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

}  // namespace

double center_logit_bias(int kernel_size, double center_weight) {
  const double others = double(kernel_size) * kernel_size - 1.0;
  if (others == 0) return 0.0;
  return std::log(center_weight / (1.0 - center_weight) * others);
}

BlurProposalNetwork::BlurProposalNetwork(std::size_t num_views, const BpnConfig& config, Rng& rng)
    : config_(config) {
  if (num_views == 0) throw std::invalid_argument("BlurProposalNetwork: at least one view is required");
  const std::array<std::size_t, 4> widths{4, config.feat_channels, config.feat_channels, config.feat_out};
  for (int l = 0; l < 3; ++l) {
    const std::size_t k = config.conv_kernels[l];
    const double bound = 1.0 / std::sqrt(double(widths[l] * k * k));
    conv_w_[l] = uniform({widths[l + 1], widths[l], k, k}, bound, rng);
    conv_b_[l] = uniform({widths[l + 1]}, bound, rng);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Real> table(num_views * config.view_dim);
  for (Real& x : table) x = Real(normal(rng));
  view_table_ = Tensor::from({num_views, config.view_dim}, std::move(table), true);

  const std::size_t mmf = config.view_dim + 4 * config.pos_freqs + config.feat_out;
  const std::array<std::size_t, 3> mlp{mmf, config.hidden, config.hidden};
  for (int l = 0; l < 2; ++l) {
    const double bound = 1.0 / std::sqrt(double(mlp[l]));
    base_w_[l] = uniform({mlp[l], mlp[l + 1]}, bound, rng);
    base_b_[l] = uniform({mlp[l + 1]}, bound, rng);
  }
  const double bound = 1.0 / std::sqrt(double(config.hidden));
  mask_w_ = uniform({config.hidden, 1}, bound, rng);
  mask_b_ = uniform({1}, bound, rng);
}

void BlurProposalNetwork::grow_head(int scale, int kernel_size, Rng& rng) {
  if (has_head(scale)) {
    throw std::invalid_argument("grow_head: scale " + std::to_string(scale) + " already has a blur head");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw std::invalid_argument("grow_head: kernel size must be odd, got " + std::to_string(kernel_size));
  }
  const std::size_t kk = static_cast<std::size_t>(kernel_size) * kernel_size;
  Head head;
  head.scale = scale;
  head.kernel_size = kernel_size;
  head.weight = uniform({config_.hidden, kk}, config_.head_init_range, rng);
  head.bias = uniform({kk}, config_.head_init_range, rng);
  head.bias.mutable_data()[kk / 2] += Real(center_logit_bias(kernel_size, config_.head_center_weight));
  heads_.push_back(std::move(head));
}

bool BlurProposalNetwork::has_head(int scale) const {
  return std::any_of(heads_.begin(), heads_.end(), [scale](const Head& h) { return h.scale == scale; });
}

const BlurProposalNetwork::Head& BlurProposalNetwork::head(int scale) const {
  for (const Head& h : heads_) {
    if (h.scale == scale) return h;
  }
  throw std::invalid_argument("no blur head for scale " + std::to_string(scale));
}

Tensor normalize_depth(const Tensor& depth) {
  const Tensor lo = quantile(depth, Real(0.02));
  const Tensor hi = quantile(depth, Real(0.98));
  if (!(hi.item() - lo.item() > Real(1e-6))) return Tensor::zeros(depth.shape());
  return clamp((depth - lo) / (hi - lo), Real(0), Real(1));
}

Tensor positional_embedding(std::size_t height, std::size_t width, std::size_t freqs) {
  const std::size_t dims = 4 * freqs;
  std::vector<Real> v(height * width * dims);
  for (std::size_t y = 0; y < height; ++y) {
    const double ny = 2.0 * (double(y) + 0.5) / double(height) - 1.0;
    for (std::size_t x = 0; x < width; ++x) {
      const double nx = 2.0 * (double(x) + 0.5) / double(width) - 1.0;
      Real* row = v.data() + (y * width + x) * dims;
      for (std::size_t l = 0; l < freqs; ++l) {
        const double f = std::ldexp(std::numbers::pi, static_cast<int>(l));
        row[4 * l + 0] = Real(std::sin(f * nx));
        row[4 * l + 1] = Real(std::cos(f * nx));
        row[4 * l + 2] = Real(std::sin(f * ny));
        row[4 * l + 3] = Real(std::cos(f * ny));
      }
    }
  }
  return Tensor::from({height * width, dims}, std::move(v));
}

Tensor BlurProposalNetwork::extract_features(const Tensor& color, const Tensor& depth) const {
  if (color.dim() != 3 || color.size(0) != 3 || depth.dim() != 2 || color.size(1) != depth.size(0) ||
      color.size(2) != depth.size(1)) {
    throw ShapeError("extract_features", color.shape(), depth.shape());
  }
  const Tensor d = reshape(normalize_depth(depth), {1, depth.size(0), depth.size(1)});
  Tensor x = concat({color, d}, 0);
  for (int l = 0; l < 3; ++l) x = relu(conv2d(x, conv_w_[l], conv_b_[l]));
  return x;
}

BlurField BlurProposalNetwork::propose(const Tensor& color, const Tensor& depth, std::size_t view,
                                       int scale) const {
  if (view >= num_views()) {
    throw std::invalid_argument("propose: unknown view index " + std::to_string(view) + " (table has " +
                                std::to_string(num_views()) + " rows)");
  }
  const Head& h = head(scale);
  const std::size_t height = color.size(1), width = color.size(2), hw = height * width;

  const Tensor feat = extract_features(color, depth);
  const Tensor per_pixel = transpose(reshape(feat, {config_.feat_out, hw}));
  const Tensor mmf = concat({repeat_row(view_table_, view, hw),
                             positional_embedding(height, width, config_.pos_freqs), per_pixel},
                            1);
  const Tensor inter = linear(relu(linear(mmf, base_w_[0], base_b_[0])), base_w_[1], base_b_[1]);

  BlurField field;
  field.kernels = softmax(linear(inter, h.weight, h.bias), 1);
  field.mask = reshape(sigmoid(linear(inter, mask_w_, mask_b_)), {height, width});
  field.scale = scale;
  field.kernel_size = h.kernel_size;
  field.height = height;
  field.width = width;
  return field;
}

std::vector<NamedParameter> BlurProposalNetwork::parameters() {
  std::vector<NamedParameter> out;
  for (int l = 0; l < 3; ++l) {
    out.push_back({"feat.conv" + std::to_string(l) + ".weight", &conv_w_[l]});
    out.push_back({"feat.conv" + std::to_string(l) + ".bias", &conv_b_[l]});
  }
  out.push_back({"view_table", &view_table_});
  for (int l = 0; l < 2; ++l) {
    out.push_back({"base.linear" + std::to_string(l) + ".weight", &base_w_[l]});
    out.push_back({"base.linear" + std::to_string(l) + ".bias", &base_b_[l]});
  }
  out.push_back({"mask.weight", &mask_w_});
  out.push_back({"mask.bias", &mask_b_});
  for (Head& h : heads_) {
    out.push_back({"blur" + std::to_string(h.scale) + ".weight", &h.weight});
    out.push_back({"blur" + std::to_string(h.scale) + ".bias", &h.bias});
  }
  return out;
}

BlurProposalNetwork BlurProposalNetwork::from_parameters(
    const BpnConfig& config, std::size_t num_views, const std::vector<std::pair<std::string, Tensor>>& named,
    const std::vector<std::pair<int, int>>& head_sizes) {
  Rng rng(0);
  BlurProposalNetwork net(num_views, config, rng);
  for (auto [scale, k] : head_sizes) net.grow_head(scale, k, rng);
  auto params = net.parameters();
  if (params.size() != named.size()) {
    throw std::invalid_argument("BPN state holds " + std::to_string(named.size()) + " arrays, expected " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != named[i].first || params[i].tensor->shape() != named[i].second.shape()) {
      throw std::invalid_argument("BPN state mismatch at '" + named[i].first + "' (expected '" +
                                  params[i].name + "' " + to_string(params[i].tensor->shape()) + ")");
    }
    *params[i].tensor = Tensor::from(named[i].second.shape(),
                                     std::vector<Real>(named[i].second.data().begin(), named[i].second.data().end()),
                                     true);
  }
  return net;
}

Tensor apply_blur(const Tensor& image, const Tensor& kernels, int kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ShapeError("apply_blur: kernel size must be odd, got " + std::to_string(kernel_size));
  }
  if (image.dim() != 3) throw ShapeError("apply_blur expects [C x H x W], got " + to_string(image.shape()));
  const std::size_t c = image.size(0), h = image.size(1), w = image.size(2), hw = h * w;
  const std::size_t kk = static_cast<std::size_t>(kernel_size) * kernel_size;
  if (kernels.dim() != 2 || kernels.size(0) != hw || kernels.size(1) != kk) {
    throw ShapeError("apply_blur", image.shape(), kernels.shape());
  }
  const int r = kernel_size / 2;
  const int hi = static_cast<int>(h), wi = static_cast<int>(w);
  auto img = image.data();
  auto ker = kernels.data();
  std::vector<Real> out(c * hw, Real(0));
  for (int y = 0; y < hi; ++y) {
    for (int x = 0; x < wi; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      const Real* kp = ker.data() + p * kk;
      for (int ky = 0; ky < kernel_size; ++ky) {
        const int sy = std::clamp(y + ky - r, 0, hi - 1);
        for (int kx = 0; kx < kernel_size; ++kx) {
          const int sx = std::clamp(x + kx - r, 0, wi - 1);
          const Real wt = kp[ky * kernel_size + kx];
          const std::size_t q = static_cast<std::size_t>(sy) * w + sx;
          for (std::size_t ch = 0; ch < c; ++ch) out[ch * hw + p] += wt * img[ch * hw + q];
        }
      }
    }
  }
  return Tensor::make_result(
      image.shape(), std::move(out), {image, kernels},
      [image, kernels, kernel_size, c, h, w, hw, kk](const detail::TensorImpl& o) {
        const int r = kernel_size / 2;
        const int hi = static_cast<int>(h), wi = static_cast<int>(w);
        auto img = image.data();
        auto ker = kernels.data();
        std::vector<Real> gi(image.requires_grad() ? c * hw : 0, Real(0));
        std::vector<Real> gk(kernels.requires_grad() ? hw * kk : 0, Real(0));
        for (int y = 0; y < hi; ++y) {
          for (int x = 0; x < wi; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            for (int ky = 0; ky < kernel_size; ++ky) {
              const int sy = std::clamp(y + ky - r, 0, hi - 1);
              for (int kx = 0; kx < kernel_size; ++kx) {
                const int sx = std::clamp(x + kx - r, 0, wi - 1);
                const std::size_t q = static_cast<std::size_t>(sy) * w + sx;
                const std::size_t ki = p * kk + static_cast<std::size_t>(ky * kernel_size + kx);
                if (!gk.empty()) {
                  Real s = 0;
                  for (std::size_t ch = 0; ch < c; ++ch) s += img[ch * hw + q] * o.grad[ch * hw + p];
                  gk[ki] += s;
                }
                if (!gi.empty()) {
                  const Real wt = ker[ki];
                  for (std::size_t ch = 0; ch < c; ++ch) gi[ch * hw + q] += wt * o.grad[ch * hw + p];
                }
              }
            }
          }
        }
        if (!gi.empty()) image.accumulate_grad(gi);
        if (!gk.empty()) kernels.accumulate_grad(gk);
      },
      "apply_blur");
}

Tensor apply_blur(const Tensor& image, const BlurField& field) {
  return apply_blur(image, field.kernels, field.kernel_size);
}

Tensor blend(const Tensor& clear, const Tensor& blurred, const Tensor& mask) {
  if (clear.shape() != blurred.shape()) throw ShapeError("blend", clear.shape(), blurred.shape());
  if (clear.dim() != 3 || mask.dim() != 2 || mask.size(0) != clear.size(1) || mask.size(1) != clear.size(2)) {
    throw ShapeError("blend", clear.shape(), mask.shape());
  }
  return clear + mask * (blurred - clear);
}

}  // namespace bags
