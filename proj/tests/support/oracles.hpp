#pragma once

// Deliberately naive reference implementations used as test oracles.

#include "bags/scene.hpp"
#include "bags/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace bags::oracle {

struct Image {
  std::vector<double> color, depth, alpha;  // 3xHxW, HxW, HxW
};

/// Per-pixel front-to-back sum over every Gaussian: same projection model
/// and 1/255 skip, but no tiles, no footprint culling, no early stop.
inline Image render(const GaussianCloud& cloud, const Camera& cam, const Eigen::Vector3d& background) {
  struct Splat {
    Eigen::Vector2d mean;
    Eigen::Matrix2d inv;
    double z, alpha;
    Eigen::Vector3d color;
    std::size_t index;
  };
  std::vector<Splat> splats;
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    const Eigen::Vector3d m = cam.rotation * cloud.position(n) + cam.translation;
    if (m.z() <= 0.01) continue;
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx / m.z(), 0, -cam.fx * m.x() / (m.z() * m.z()), 0, cam.fy / m.z(), -cam.fy * m.y() / (m.z() * m.z());
    const Eigen::Matrix2d cov = j * cam.rotation * covariance(cloud, n) * cam.rotation.transpose() * j.transpose() +
                                0.3 * Eigen::Matrix2d::Identity();
    splats.push_back({{cam.fx * m.x() / m.z() + cam.cx, cam.fy * m.y() / m.z() + cam.cy},
                      cov.inverse(),
                      m.z(),
                      cloud.opacity(n),
                      cloud.color(n),
                      n});
  }
  std::stable_sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) { return a.z < b.z; });
  const std::size_t h = std::size_t(cam.height), w = std::size_t(cam.width);
  Image img{std::vector<double>(3 * h * w), std::vector<double>(h * w), std::vector<double>(h * w)};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const Eigen::Vector2d px(x + 0.5, y + 0.5);
      double t = 1;
      Eigen::Vector3d c = Eigen::Vector3d::Zero();
      double d = 0;
      for (const Splat& s : splats) {
        const Eigen::Vector2d dv = px - s.mean;
        const double a = s.alpha * std::exp(-0.5 * dv.dot(s.inv * dv));
        if (a < 1.0 / 255.0) continue;
        c += t * a * s.color;
        d += t * a * s.z;
        t *= 1 - a;
      }
      c += t * background;
      for (int ch = 0; ch < 3; ++ch) img.color[(ch * h + y) * w + x] = c[ch];
      img.depth[y * w + x] = d;
      img.alpha[y * w + x] = 1 - t;
    }
  }
  return img;
}

/// out(x) = sum over the KxK window of image(clamp(x + o)) * kernel(x)[o].
inline std::vector<double> apply_blur(const Tensor& image, const Tensor& kernels, int k) {
  const int c = int(image.size(0)), h = int(image.size(1)), w = int(image.size(2)), r = k / 2;
  std::vector<double> out(image.numel(), 0.0);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int sy = std::clamp(y + dy, 0, h - 1), sx = std::clamp(x + dx, 0, w - 1);
            const double wt = kernels[std::size_t((y * w + x) * k * k + (dy + r) * k + dx + r)];
            out[std::size_t((ch * h + y) * w + x)] += wt * image[std::size_t((ch * h + sy) * w + sx)];
          }
  return out;
}

/// Random Gaussians in front of `cam` (between 1.5 and 4 units along its axis).
inline GaussianCloud random_cloud(std::size_t n, const Camera& cam, std::mt19937_64& rng,
                                  double min_log_scale = -3.0, double max_log_scale = -1.5) {
  std::uniform_real_distribution<double> u(-1, 1), depth(1.5, 4), ls(min_log_scale, max_log_scale);
  std::normal_distribution<double> normal(0, 1);
  std::vector<Real> pos, scales, rot, op, col;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = depth(rng);
    const Eigen::Vector3d cam_pt(u(rng) * 0.4 * z, u(rng) * 0.4 * z, z);
    const Eigen::Vector3d world = cam.rotation.transpose() * (cam_pt - cam.translation);
    Eigen::Vector4d q(normal(rng), normal(rng), normal(rng), normal(rng));
    q.normalize();
    for (int a = 0; a < 3; ++a) {
      pos.push_back(world[a]);
      scales.push_back(ls(rng));
      col.push_back(2 * u(rng));
    }
    for (int a = 0; a < 4; ++a) rot.push_back(q[a]);
    op.push_back(1.5 * u(rng) + 0.5);
  }
  return GaussianCloud::from_values(pos, scales, rot, op, col);
}

}  // namespace bags::oracle
