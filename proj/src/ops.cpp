#include "bags/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bags {
namespace {

using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

// Products run on owned (aligned) copies. SIMD peeling over a Map depends on
// the heap address, which would make the rounding differ from run to run.
MatR owned(const Real* p, std::size_t rows, std::size_t cols) { return CMapR(p, rows, cols); }

std::vector<Real> to_vector(const MatR& m) { return {m.data(), m.data() + m.size()}; }

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Result shape of a trailing-dimension broadcast.
Shape broadcast_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.numel() == 1 && a.numel() >= 1) return a.shape();
  if (a.numel() == 1) return b.shape();
  if (is_suffix(b.shape(), a.shape())) return a.shape();
  if (is_suffix(a.shape(), b.shape())) return b.shape();
  throw ShapeError(op, a.shape(), b.shape());
}

// f(x, y) -> value, df/dx, df/dy evaluated per element.
template <typename Fwd, typename Dx, typename Dy>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Dx dx, Dy dy) {
  Shape shape = broadcast_shape(name, a, b);
  const std::size_t n = shape_numel(shape);
  const std::size_t na = a.numel(), nb = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i % na], bd[i % nb]);
  return Tensor::make_result(
      std::move(shape), std::move(out), {a, b},
      [a, b, dx, dy, n, na, nb](const detail::TensorImpl& o) {
        auto ad = a.data();
        auto bd = b.data();
        if (a.requires_grad()) {
          std::vector<Real> g(na, Real(0));
          for (std::size_t i = 0; i < n; ++i) g[i % na] += o.grad[i] * dx(ad[i % na], bd[i % nb]);
          a.accumulate_grad(g);
        }
        if (b.requires_grad()) {
          std::vector<Real> g(nb, Real(0));
          for (std::size_t i = 0; i < n; ++i) g[i % nb] += o.grad[i] * dy(ad[i % na], bd[i % nb]);
          b.accumulate_grad(g);
        }
      },
      name);
}

// Unary op where the derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  const std::size_t n = a.numel();
  auto ad = a.data();
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i]);
  auto values = std::make_shared<std::vector<Real>>(out);
  return Tensor::make_result(
      a.shape(), std::move(out), {a},
      [a, deriv, values](const detail::TensorImpl& o) {
        auto ad = a.data();
        std::vector<Real> g(ad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * deriv(ad[i], (*values)[i]);
        a.accumulate_grad(g);
      },
      name);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
      [](Real x, Real) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (Real v : b.data()) {
    if (v == Real(0)) throw DomainError("div: division by zero in divisor of shape " + to_string(b.shape()));
  }
  return binary(
      "div", a, b, [](Real x, Real y) { return x / y; }, [](Real, Real y) { return Real(1) / y; },
      [](Real x, Real y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, Real s) {
  return unary(
      "add_scalar", a, [s](Real x) { return x + s; }, [](Real, Real) { return Real(1); });
}

Tensor mul_scalar(const Tensor& a, Real s) {
  return unary(
      "mul_scalar", a, [s](Real x) { return x * s; }, [s](Real, Real) { return s; });
}

Tensor neg(const Tensor& a) {
  return unary(
      "neg", a, [](Real x) { return -x; }, [](Real, Real) { return Real(-1); });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& a) {
  for (Real v : a.data()) {
    if (!(v > Real(0))) throw DomainError("log: nonpositive argument " + std::to_string(v));
  }
  return unary(
      "log", a, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](Real x) { return x > Real(0) ? x : Real(0); },
      [](Real x, Real) { return x > Real(0) ? Real(1) : Real(0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](Real x) {
        if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
        const Real e = std::exp(x);
        return e / (Real(1) + e);
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor abs(const Tensor& a) {
  return unary(
      "abs", a, [](Real x) { return std::abs(x); },
      [](Real x, Real) { return x > Real(0) ? Real(1) : (x < Real(0) ? Real(-1) : Real(0)); });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](Real x) { return x * x; }, [](Real x, Real) { return Real(2) * x; });
}

Tensor clamp(const Tensor& a, Real lo, Real hi) {
  return unary(
      "clamp", a, [lo, hi](Real x) { return std::clamp(x, lo, hi); },
      [lo, hi](Real x, Real) { return (x > lo && x < hi) ? Real(1) : Real(0); });
}

Tensor sum(const Tensor& a) {
  auto d = a.data();
  Real s = 0;
  for (Real v : d) s += v;
  return Tensor::make_result(
      {}, {s}, {a},
      [a](const detail::TensorImpl& o) { a.accumulate_grad(std::vector<Real>(a.numel(), o.grad[0])); },
      "sum");
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return mul_scalar(sum(a), Real(1) / Real(a.numel()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
    throw ShapeError("matmul", a.shape(), b.shape());
  }
  const auto m = a.size(0), k = a.size(1), n = b.size(1);
  MatR out(m, n);
  out.noalias() = owned(a.data().data(), m, k) * owned(b.data().data(), k, n);
  return Tensor::make_result(
      {m, n}, to_vector(out), {a, b},
      [a, b, m, k, n](const detail::TensorImpl& o) {
        const MatR g = owned(o.grad.data(), m, n);
        if (a.requires_grad()) {
          MatR ga(m, k);
          ga.noalias() = g * owned(b.data().data(), k, n).transpose();
          a.accumulate_grad(std::span<const Real>(ga.data(), ga.size()));
        }
        if (b.requires_grad()) {
          MatR gb(k, n);
          gb.noalias() = owned(a.data().data(), m, k).transpose() * g;
          b.accumulate_grad(std::span<const Real>(gb.data(), gb.size()));
        }
      },
      "matmul");
}

Tensor transpose(const Tensor& a) {
  if (a.dim() != 2) throw ShapeError("transpose expects a 2-D tensor, got " + to_string(a.shape()));
  const auto r = a.size(0), c = a.size(1);
  std::vector<Real> out(r * c);
  MapR(out.data(), c, r) = CMapR(a.data().data(), r, c).transpose();
  return Tensor::make_result(
      {c, r}, std::move(out), {a},
      [a, r, c](const detail::TensorImpl& o) {
        std::vector<Real> g(r * c);
        MapR(g.data(), r, c) = CMapR(o.grad.data(), c, r).transpose();
        a.accumulate_grad(g);
      },
      "transpose");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) throw ShapeError("reshape", a.shape(), shape);
  return Tensor::make_result(
      std::move(shape), std::vector<Real>(a.data().begin(), a.data().end()), {a},
      [a](const detail::TensorImpl& o) { a.accumulate_grad(o.grad); }, "reshape");
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.dim()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + to_string(a.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.size(i);
  for (std::size_t i = axis + 1; i < a.dim(); ++i) inner *= a.size(i);
  const std::size_t n = a.size(axis);
  auto x = a.data();
  std::vector<Real> y(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      Real mx = x[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      Real s = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const Real e = std::exp(x[base + j * inner] - mx);
        y[base + j * inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < n; ++j) y[base + j * inner] /= s;
    }
  }
  auto values = std::make_shared<std::vector<Real>>(y);
  return Tensor::make_result(
      a.shape(), std::move(y), {a},
      [a, values, outer, inner, n](const detail::TensorImpl& o) {
        const auto& y = *values;
        std::vector<Real> g(y.size());
        for (std::size_t oo = 0; oo < outer; ++oo) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = oo * n * inner + in;
            Real dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += o.grad[base + j * inner] * y[base + j * inner];
            for (std::size_t j = 0; j < n; ++j) {
              const std::size_t idx = base + j * inner;
              g[idx] = y[idx] * (o.grad[idx] - dot);
            }
          }
        }
        a.accumulate_grad(g);
      },
      "softmax");
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.dim() != 3 || weight.dim() != 4 || weight.size(1) != input.size(0) ||
      weight.size(2) != weight.size(3)) {
    throw ShapeError("conv2d", input.shape(), weight.shape());
  }
  const std::size_t k = weight.size(2);
  if (k % 2 == 0) throw ShapeError("conv2d: even kernel size " + std::to_string(k) + " rejected");
  const std::size_t cin = input.size(0), h = input.size(1), w = input.size(2);
  const std::size_t cout = weight.size(0);
  if (bias.defined() && bias.numel() != cout) throw ShapeError("conv2d bias", bias.shape(), {cout});
  const std::size_t hw = h * w, rows = cin * k * k;
  const long r = static_cast<long>(k / 2);

  // im2col: row (c, ky, kx), column pixel; taps outside the image are zero.
  auto cols = std::make_shared<MatR>(rows, hw);
  auto in = input.data();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        Real* dst = cols->data() + ((c * k + ky) * k + kx) * hw;
        const long dy = static_cast<long>(ky) - r, dx = static_cast<long>(kx) - r;
        const long x0 = std::max<long>(0, -dx);
        const long x1 = std::min<long>(static_cast<long>(w), static_cast<long>(w) - dx);
        for (std::size_t y = 0; y < h; ++y) {
          Real* row = dst + y * w;
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(row, row + w, Real(0));
            continue;
          }
          const Real* src = in.data() + (c * h + sy) * w;
          std::fill(row, row + x0, Real(0));
          std::copy(src + x0 + dx, src + x1 + dx, row + x0);
          std::fill(row + x1, row + w, Real(0));
        }
      }
    }
  }

  MatR out_m(cout, hw);
  out_m.noalias() = owned(weight.data().data(), cout, rows) * *cols;
  if (bias.defined()) {
    auto bd = bias.data();
    for (std::size_t o = 0; o < cout; ++o) out_m.row(o).array() += bd[o];
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      {cout, h, w}, to_vector(out_m), std::move(inputs),
      [input, weight, bias, cols, cin, cout, h, w, k, r, hw, rows](const detail::TensorImpl& o) {
        const MatR g = owned(o.grad.data(), cout, hw);
        if (weight.requires_grad()) {
          MatR gw(cout, rows);
          gw.noalias() = g * cols->transpose();
          weight.accumulate_grad(std::span<const Real>(gw.data(), gw.size()));
        }
        if (bias.defined() && bias.requires_grad()) {
          std::vector<Real> gb(cout);
          for (std::size_t c = 0; c < cout; ++c) gb[c] = g.row(c).sum();
          bias.accumulate_grad(gb);
        }
        if (input.requires_grad()) {
          MatR gcols(rows, hw);
          gcols.noalias() = owned(weight.data().data(), cout, rows).transpose() * g;
          std::vector<Real> gi(cin * h * w, Real(0));
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const Real* src = gcols.data() + ((c * k + ky) * k + kx) * hw;
                const long dy = static_cast<long>(ky) - r, dx = static_cast<long>(kx) - r;
                for (std::size_t y = 0; y < h; ++y) {
                  const long sy = static_cast<long>(y) + dy;
                  if (sy < 0 || sy >= static_cast<long>(h)) continue;
                  Real* dst = gi.data() + (c * h + sy) * w;
                  const long x0 = std::max<long>(0, -dx);
                  const long x1 = std::min<long>(static_cast<long>(w), static_cast<long>(w) - dx);
                  for (long x = x0; x < x1; ++x) dst[x + dx] += src[y * w + x];
                }
              }
            }
          }
          input.accumulate_grad(gi);
        }
      },
      "conv2d");
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + to_string(s0));
  Shape shape = s0;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.dim() != s0.size()) throw ShapeError("concat", s0, p.shape());
    for (std::size_t i = 0; i < s0.size(); ++i) {
      if (i != axis && p.size(i) != s0[i]) throw ShapeError("concat", s0, p.shape());
    }
    shape[axis] += p.size(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  const std::size_t total = shape[axis];
  std::vector<Real> out(shape_numel(shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t n = p.size(axis);
    auto d = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(d.data() + o * n * inner, n * inner, out.data() + (o * total + offset) * inner);
    }
    offset += n;
  }
  return Tensor::make_result(
      std::move(shape), std::move(out), parts,
      [parts, offsets, outer, inner, total, axis](const detail::TensorImpl& o) {
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
          const auto& p = parts[pi];
          if (!p.requires_grad()) continue;
          const std::size_t n = p.size(axis);
          std::vector<Real> g(p.numel());
          for (std::size_t oo = 0; oo < outer; ++oo) {
            std::copy_n(o.grad.data() + (oo * total + offsets[pi]) * inner, n * inner,
                        g.data() + oo * n * inner);
          }
          p.accumulate_grad(g);
        }
      },
      "concat");
}

Tensor narrow(const Tensor& a, std::size_t start, std::size_t length) {
  if (a.dim() == 0 || start + length > a.size(0)) {
    throw ShapeError("narrow [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for " + to_string(a.shape()));
  }
  Shape shape = a.shape();
  shape[0] = length;
  const std::size_t inner = a.numel() / a.size(0);
  auto d = a.data();
  std::vector<Real> out(d.begin() + start * inner, d.begin() + (start + length) * inner);
  return Tensor::make_result(
      std::move(shape), std::move(out), {a},
      [a, start, length, inner](const detail::TensorImpl& o) {
        std::vector<Real> g(a.numel(), Real(0));
        std::copy_n(o.grad.data(), length * inner, g.data() + start * inner);
        a.accumulate_grad(g);
      },
      "narrow");
}

Tensor repeat_row(const Tensor& table, std::size_t row, std::size_t times) {
  if (table.dim() != 2 || row >= table.size(0)) {
    throw ShapeError("repeat_row: row " + std::to_string(row) + " out of range for " +
                     to_string(table.shape()));
  }
  const std::size_t d = table.size(1);
  std::vector<Real> out(times * d);
  auto src = table.data().subspan(row * d, d);
  for (std::size_t t = 0; t < times; ++t) std::copy(src.begin(), src.end(), out.begin() + t * d);
  return Tensor::make_result(
      {times, d}, std::move(out), {table},
      [table, row, times, d](const detail::TensorImpl& o) {
        std::vector<Real> g(table.numel(), Real(0));
        for (std::size_t t = 0; t < times; ++t) {
          for (std::size_t j = 0; j < d; ++j) g[row * d + j] += o.grad[t * d + j];
        }
        table.accumulate_grad(g);
      },
      "repeat_row");
}

Tensor quantile(const Tensor& a, Real q) {
  if (a.numel() == 0) throw ShapeError("quantile of an empty tensor");
  q = std::clamp(q, Real(0), Real(1));
  auto d = a.data();
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return d[i] < d[j]; });
  const Real pos = q * Real(d.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, d.size() - 1);
  const Real f = pos - Real(lo);
  const std::size_t ilo = idx[lo], ihi = idx[hi];
  const Real value = (Real(1) - f) * d[ilo] + f * d[ihi];
  return Tensor::make_result(
      {}, {value}, {a},
      [a, ilo, ihi, f](const detail::TensorImpl& o) {
        std::vector<Real> g(a.numel(), Real(0));
        g[ilo] += (Real(1) - f) * o.grad[0];
        g[ihi] += f * o.grad[0];
        a.accumulate_grad(g);
      },
      "quantile");
}

std::vector<Real> gaussian_window(std::size_t window, Real sigma) {
  std::vector<Real> wts(window);
  const Real c = Real(window / 2);
  Real s = 0;
  for (std::size_t i = 0; i < window; ++i) {
    const Real x = Real(i) - c;
    wts[i] = std::exp(-x * x / (Real(2) * sigma * sigma));
    s += wts[i];
  }
  for (Real& v : wts) v /= s;
  return wts;
}

Tensor gaussian_filter_valid(const Tensor& image, std::size_t window, Real sigma) {
  if (image.dim() != 3 || image.size(1) < window || image.size(2) < window) {
    throw ShapeError("gaussian_filter_valid: image " + to_string(image.shape()) +
                     " smaller than window " + std::to_string(window));
  }
  const std::size_t c = image.size(0), h = image.size(1), w = image.size(2);
  const std::size_t oh = h - window + 1, ow = w - window + 1;
  const auto wts = gaussian_window(window, sigma);
  auto in = image.data();
  std::vector<Real> tmp(c * h * ow, Real(0));
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const Real* row = in.data() + (ch * h + y) * w;
      Real* dst = tmp.data() + (ch * h + y) * ow;
      for (std::size_t x = 0; x < ow; ++x) {
        Real s = 0;
        for (std::size_t k = 0; k < window; ++k) s += wts[k] * row[x + k];
        dst[x] = s;
      }
    }
  }
  std::vector<Real> out(c * oh * ow, Real(0));
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      Real* dst = out.data() + (ch * oh + y) * ow;
      for (std::size_t k = 0; k < window; ++k) {
        const Real* src = tmp.data() + (ch * h + y + k) * ow;
        for (std::size_t x = 0; x < ow; ++x) dst[x] += wts[k] * src[x];
      }
    }
  }
  return Tensor::make_result(
      {c, oh, ow}, std::move(out), {image},
      [image, wts, c, h, w, oh, ow, window](const detail::TensorImpl& o) {
        std::vector<Real> gtmp(c * h * ow, Real(0));
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t y = 0; y < oh; ++y) {
            const Real* g = o.grad.data() + (ch * oh + y) * ow;
            for (std::size_t k = 0; k < window; ++k) {
              Real* dst = gtmp.data() + (ch * h + y + k) * ow;
              for (std::size_t x = 0; x < ow; ++x) dst[x] += wts[k] * g[x];
            }
          }
        }
        std::vector<Real> gi(c * h * w, Real(0));
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t y = 0; y < h; ++y) {
            const Real* g = gtmp.data() + (ch * h + y) * ow;
            Real* dst = gi.data() + (ch * h + y) * w;
            for (std::size_t x = 0; x < ow; ++x) {
              for (std::size_t k = 0; k < window; ++k) dst[x + k] += wts[k] * g[x];
            }
          }
        }
        image.accumulate_grad(gi);
      },
      "gaussian_filter_valid");
}

}  // namespace bags
