#pragma once

#include "bags/tensor.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bags {

/// Pinhole camera. `rotation`/`translation` map world to camera coordinates
/// (x right, y down, z forward). Pixel (i, j) is sampled at (i + 0.5, j + 0.5).
struct Camera {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 0, height = 0;
  int view_index = 0;
  std::string image_path;

  /// Throws std::invalid_argument when R is not orthonormal or the size is empty.
  void validate() const;
  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  /// Camera for an image downsampled by `factor`: dims rounded up, intrinsics divided.
  Camera downscaled(int factor) const;
};

/// Camera at `eye` looking at `target`, with image "up" along world `up`.
Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
               double fx, double fy, int width, int height);

/// The optimizable scene. Rows are Gaussians; every field is a leaf tensor
/// that requires a gradient.
struct GaussianCloud {
  Tensor positions;       // N x 3, world units
  Tensor log_scales;      // N x 3, scale = exp(log_scale)
  Tensor rotations;       // N x 4, quaternion (w, x, y, z)
  Tensor opacity_logits;  // N x 1, opacity = sigmoid(logit)
  Tensor color_logits;    // N x 3, rgb = sigmoid(logit)

  std::size_t size() const { return positions.defined() ? positions.size(0) : 0; }
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

  Eigen::Vector3d position(std::size_t n) const;
  Eigen::Vector3d scale(std::size_t n) const;
  Eigen::Vector4d quaternion(std::size_t n) const;
  double opacity(std::size_t n) const;
  Eigen::Vector3d color(std::size_t n) const;

  /// Renormalizes every quaternion to unit length.
  void normalize_rotations();
  /// Deep copy with fresh leaf tensors.
  GaussianCloud clone() const;

  static GaussianCloud from_values(std::vector<Real> positions, std::vector<Real> log_scales,
                                   std::vector<Real> rotations, std::vector<Real> opacity_logits,
                                   std::vector<Real> color_logits);
  static GaussianCloud empty() { return from_values({}, {}, {}, {}, {}); }
};

/// Rotation matrix of a (not necessarily unit) quaternion (w, x, y, z).
Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& q);

/// Sigma = R diag(exp(2 log_scale)) R^T.
Eigen::Matrix3d covariance(const GaussianCloud& cloud, std::size_t n);

/// exp(-1/2 (v - p)^T Sigma^-1 (v - p)). Throws DomainError on a singular Sigma.
double evaluate_gaussian(const GaussianCloud& cloud, std::size_t n, const Eigen::Vector3d& v);

struct InitConfig {
  double default_scale = 0.1;  // used when a point has no neighbours
  double initial_opacity = 0.1;
  std::size_t neighbours = 3;
};

/// One isotropic Gaussian per seed point, sized by the mean distance to its
/// nearest neighbours.
GaussianCloud init_from_points(std::span<const Eigen::Vector3d> points,
                               std::span<const Eigen::Vector3d> colors,
                               const InitConfig& config = {});

double logit(double p);

}  // namespace bags
