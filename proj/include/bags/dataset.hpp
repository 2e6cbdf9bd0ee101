#pragma once

#include "bags/ply.hpp"
#include "bags/scene.hpp"
#include "bags/tensor.hpp"

#include <filesystem>
#include <vector>

namespace bags {

/// Camera list as stored in cameras.json: an array of
/// {rotation[9] row-major, translation[3], fx, fy, cx, cy, width, height, image_path}.
std::vector<Camera> read_cameras(const std::filesystem::path& path);
void write_cameras(const std::filesystem::path& path, const std::vector<Camera>& cameras);

/// A dataset directory: cameras.json, points.ply, train/####.png, test/####.png.
/// Cameras whose image_path starts with "test/" form the test split; all
/// others are training views. view_index is the position within the split.
struct Dataset {
  std::filesystem::path root;
  std::vector<Camera> train_cameras;
  std::vector<Camera> test_cameras;
  std::vector<Tensor> train_images;  // empty unless loaded
  std::vector<Tensor> test_images;
  PointCloud points;
};

/// Throws std::runtime_error naming the offending file or field.
Dataset load_dataset(const std::filesystem::path& root, bool load_train_images = true,
                     bool load_test_images = false);

}  // namespace bags
