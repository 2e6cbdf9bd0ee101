#include "bags/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bags {

Tensor downsample(const Tensor& image, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample: factor must be >= 1");
  if (image.dim() != 3) throw ShapeError("downsample expects [C x H x W], got " + to_string(image.shape()));
  if (factor == 1) return image.detach();
  const std::size_t c = image.size(0), h = image.size(1), w = image.size(2);
  const std::size_t f = static_cast<std::size_t>(factor);
  const std::size_t oh = (h + f - 1) / f, ow = (w + f - 1) / f;
  auto in = image.data();
  std::vector<Real> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0;
        for (std::size_t by = 0; by < f; ++by) {
          const std::size_t sy = std::min(h - 1, y * f + by);
          for (std::size_t bx = 0; bx < f; ++bx) {
            const std::size_t sx = std::min(w - 1, x * f + bx);
            s += double(in[(ch * h + sy) * w + sx]);
          }
        }
        out[(ch * oh + y) * ow + x] = Real(s / double(f * f));
      }
    }
  }
  return Tensor::from({c, oh, ow}, std::move(out));
}

Tensor upsample_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.dim() != 3) throw ShapeError("upsample_bilinear expects [C x H x W], got " + to_string(image.shape()));
  const std::size_t c = image.size(0), h = image.size(1), w = image.size(2);
  auto in = image.data();
  std::vector<Real> out(c * height * width);
  const double sy = double(h) / double(height), sx = double(w) / double(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(std::floor(fy));
    const std::size_t y1 = std::min(h - 1, y0 + 1);
    const double ty = fy - double(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(std::floor(fx));
      const std::size_t x1 = std::min(w - 1, x0 + 1);
      const double tx = fx - double(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const Real* p = in.data() + ch * h * w;
        const double top = (1 - tx) * p[y0 * w + x0] + tx * p[y0 * w + x1];
        const double bot = (1 - tx) * p[y1 * w + x0] + tx * p[y1 * w + x1];
        out[(ch * height + y) * width + x] = Real((1 - ty) * top + ty * bot);
      }
    }
  }
  return Tensor::from({c, height, width}, std::move(out));
}

Tensor convolve(const Tensor& image, const Tensor& kernel) {
  if (image.dim() != 3) throw ShapeError("convolve expects [C x H x W], got " + to_string(image.shape()));
  if (kernel.dim() != 2 || kernel.size(0) != kernel.size(1) || kernel.size(0) % 2 == 0) {
    throw ShapeError("convolve: kernel must be square and odd, got " + to_string(kernel.shape()));
  }
  const int c = static_cast<int>(image.size(0)), h = static_cast<int>(image.size(1)),
            w = static_cast<int>(image.size(2));
  const int k = static_cast<int>(kernel.size(0)), r = k / 2;
  auto in = image.data();
  auto kd = kernel.data();
  std::vector<Real> out(image.numel(), Real(0));
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = 0;
        for (int ky = 0; ky < k; ++ky) {
          const int sy = std::clamp(y - (ky - r), 0, h - 1);
          for (int kx = 0; kx < k; ++kx) {
            const double wt = kd[ky * k + kx];
            if (wt == 0) continue;
            const int sx = std::clamp(x - (kx - r), 0, w - 1);
            s += wt * in[(ch * h + sy) * w + sx];
          }
        }
        out[(ch * h + y) * w + x] = Real(s);
      }
    }
  }
  return Tensor::from(image.shape(), std::move(out));
}

}  // namespace bags
