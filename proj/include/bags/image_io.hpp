#pragma once

#include "bags/tensor.hpp"

#include <filesystem>

namespace bags {

/// Reads an 8-bit PNG as a [3 x H x W] tensor in [0, 1]. Gray images are
/// replicated to three channels, alpha is dropped.
Tensor read_png(const std::filesystem::path& path);

/// Writes a [1 x H x W], [H x W] or [3 x H x W] tensor, clamped to [0, 1]
/// and rounded to 8 bits.
void write_png(const std::filesystem::path& path, const Tensor& image);

}  // namespace bags
