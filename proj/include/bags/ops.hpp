#pragma once

#include "bags/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace bags {

// Binary elementwise ops broadcast over trailing dimensions: the shape of
// the smaller operand must equal a suffix of the larger one (a one-element
// tensor broadcasts everywhere).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, Real s);
Tensor mul_scalar(const Tensor& a, Real s);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
/// Gradient passes where lo < a < hi.
Tensor clamp(const Tensor& a, Real lo, Real hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, Real s) { return mul_scalar(a, s); }
inline Tensor operator*(Real s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, Real s) { return add_scalar(a, s); }

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& a, std::size_t axis);

/// Same-size 2-D cross-correlation with zero padding (k-1)/2.
/// input [Cin x H x W], weight [Cout x Cin x k x k], bias [Cout] (may be undefined).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Concatenation along `axis`; all other extents must agree.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Slice [start, start+length) along axis 0.
Tensor narrow(const Tensor& a, std::size_t start, std::size_t length);
/// Selects row `row` of a 2-D tensor and repeats it `times` times.
Tensor repeat_row(const Tensor& table, std::size_t row, std::size_t times);

/// Linearly interpolated quantile (q in [0,1]) of all entries. The gradient
/// flows to the two order statistics it interpolates.
Tensor quantile(const Tensor& a, Real q);

/// Separable Gaussian filter over each channel of [C x H x W] keeping only
/// positions where the full window fits: output [C x (H-w+1) x (W-w+1)].
Tensor gaussian_filter_valid(const Tensor& image, std::size_t window, Real sigma);

/// Normalized 1-D Gaussian weights.
std::vector<Real> gaussian_window(std::size_t window, Real sigma);

}  // namespace bags
