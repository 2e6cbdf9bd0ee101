#pragma once

#include "bags/tensor.hpp"

namespace bags {

/// Area average over factor x factor blocks of a [C x H x W] image. Output
/// dims are rounded up; blocks hanging over the edge reuse the last
/// row/column.
Tensor downsample(const Tensor& image, int factor);

/// Bilinear resize of a [C x H x W] image to [C x height x width] with
/// pixel-center alignment and clamped borders.
Tensor upsample_bilinear(const Tensor& image, std::size_t height, std::size_t width);

/// Convolution of every channel with one odd-sized [K x K] kernel,
/// replicate padding. out(x) = sum_o kernel(o) * image(x - o).
Tensor convolve(const Tensor& image, const Tensor& kernel);

}  // namespace bags
