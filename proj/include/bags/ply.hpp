#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <vector>

namespace bags {

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<Eigen::Vector3d> colors;  // [0, 1]
};

/// Reads vertex x, y, z (and red, green, blue when present) from an ascii or
/// binary little-endian PLY file. Integer colors are scaled from [0, 255].
PointCloud read_ply(const std::filesystem::path& path);

/// Writes binary little-endian PLY with float positions and uchar colors.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);

}  // namespace bags
