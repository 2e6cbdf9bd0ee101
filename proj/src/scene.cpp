#include "bags/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bags {

void Camera::validate() const {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("camera " + std::to_string(view_index) + ": empty image size " +
                                std::to_string(width) + "x" + std::to_string(height));
  }
  const double err = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (err > 1e-6) {
    throw std::invalid_argument("camera " + std::to_string(view_index) +
                                ": rotation is not orthonormal (|R^T R - I| = " + std::to_string(err) + ")");
  }
  if (!(fx > 0) || !(fy > 0)) {
    throw std::invalid_argument("camera " + std::to_string(view_index) + ": focal lengths must be positive");
  }
}

Camera Camera::downscaled(int factor) const {
  if (factor < 1) throw std::invalid_argument("downscale factor must be >= 1");
  Camera c = *this;
  c.width = (width + factor - 1) / factor;
  c.height = (height + factor - 1) / factor;
  c.fx = fx / factor;
  c.fy = fy / factor;
  c.cx = cx / factor;
  c.cy = cy / factor;
  return c;
}

Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
               double fx, double fy, int width, int height) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  // Image y points down, so the camera's y axis is opposite to world up.
  Eigen::Vector3d right = forward.cross(up);
  if (right.norm() < 1e-12) throw std::invalid_argument("look_at: up is parallel to the view direction");
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  Camera cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * eye;
  cam.fx = fx;
  cam.fy = fy;
  cam.width = width;
  cam.height = height;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  return cam;
}

std::vector<Tensor*> GaussianCloud::parameters() {
  return {&positions, &log_scales, &rotations, &opacity_logits, &color_logits};
}

std::vector<const Tensor*> GaussianCloud::parameters() const {
  return {&positions, &log_scales, &rotations, &opacity_logits, &color_logits};
}

Eigen::Vector3d GaussianCloud::position(std::size_t n) const {
  auto d = positions.data();
  return {double(d[3 * n]), double(d[3 * n + 1]), double(d[3 * n + 2])};
}

Eigen::Vector3d GaussianCloud::scale(std::size_t n) const {
  auto d = log_scales.data();
  return {std::exp(double(d[3 * n])), std::exp(double(d[3 * n + 1])), std::exp(double(d[3 * n + 2]))};
}

Eigen::Vector4d GaussianCloud::quaternion(std::size_t n) const {
  auto d = rotations.data();
  return {double(d[4 * n]), double(d[4 * n + 1]), double(d[4 * n + 2]), double(d[4 * n + 3])};
}

namespace {
double sigmoid_d(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
}  // namespace

double GaussianCloud::opacity(std::size_t n) const {
  return sigmoid_d(double(opacity_logits.data()[n]));
}

Eigen::Vector3d GaussianCloud::color(std::size_t n) const {
  auto d = color_logits.data();
  return {sigmoid_d(double(d[3 * n])), sigmoid_d(double(d[3 * n + 1])), sigmoid_d(double(d[3 * n + 2]))};
}

void GaussianCloud::normalize_rotations() {
  auto d = rotations.mutable_data();
  for (std::size_t n = 0; n < size(); ++n) {
    Real* q = d.data() + 4 * n;
    const Real norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (norm > Real(0)) {
      for (int k = 0; k < 4; ++k) q[k] /= norm;
    } else {
      q[0] = 1;
      q[1] = q[2] = q[3] = 0;
    }
  }
}

GaussianCloud GaussianCloud::clone() const {
  auto copy = [](const Tensor& t) {
    return std::vector<Real>(t.data().begin(), t.data().end());
  };
  return from_values(copy(positions), copy(log_scales), copy(rotations), copy(opacity_logits),
                     copy(color_logits));
}

GaussianCloud GaussianCloud::from_values(std::vector<Real> positions, std::vector<Real> log_scales,
                                         std::vector<Real> rotations, std::vector<Real> opacity_logits,
                                         std::vector<Real> color_logits) {
  const std::size_t n = opacity_logits.size();
  GaussianCloud c;
  c.positions = Tensor::from({n, 3}, std::move(positions), true);
  c.log_scales = Tensor::from({n, 3}, std::move(log_scales), true);
  c.rotations = Tensor::from({n, 4}, std::move(rotations), true);
  c.opacity_logits = Tensor::from({n, 1}, std::move(opacity_logits), true);
  c.color_logits = Tensor::from({n, 3}, std::move(color_logits), true);
  return c;
}

Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& q_raw) {
  const Eigen::Vector4d q = q_raw.normalized();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Eigen::Matrix3d covariance(const GaussianCloud& cloud, std::size_t n) {
  if (n >= cloud.size()) throw std::out_of_range("covariance: Gaussian index out of range");
  const Eigen::Matrix3d r = quaternion_to_matrix(cloud.quaternion(n));
  const Eigen::Vector3d s = cloud.scale(n);
  const Eigen::Matrix3d m = r * s.asDiagonal();
  return m * m.transpose();
}

double evaluate_gaussian(const GaussianCloud& cloud, std::size_t n, const Eigen::Vector3d& v) {
  const Eigen::Matrix3d sigma = covariance(cloud, n);
  Eigen::LDLT<Eigen::Matrix3d> ldlt(sigma);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-300) {
    throw DomainError("evaluate_gaussian: singular covariance for Gaussian " + std::to_string(n));
  }
  const Eigen::Vector3d d = v - cloud.position(n);
  return std::exp(-0.5 * d.dot(ldlt.solve(d)));
}

double logit(double p) {
  return std::log(p / (1.0 - p));
}

GaussianCloud init_from_points(std::span<const Eigen::Vector3d> points,
                               std::span<const Eigen::Vector3d> colors, const InitConfig& config) {
  if (points.empty()) throw std::invalid_argument("init_from_points: empty point set");
  if (colors.size() != points.size()) {
    throw std::invalid_argument("init_from_points: " + std::to_string(points.size()) + " points but " +
                                std::to_string(colors.size()) + " colors");
  }
  const std::size_t m = points.size();
  std::vector<Real> pos(3 * m), ls(3 * m), rot(4 * m, Real(0)), op(m), col(3 * m);
  std::vector<double> dist;
  for (std::size_t i = 0; i < m; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) dist.push_back((points[i] - points[j]).norm());
    }
    double scale = config.default_scale;
    if (!dist.empty()) {
      const std::size_t k = std::min(config.neighbours, dist.size());
      std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(k), dist.end());
      double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += dist[t];
      scale = s / double(k);
      if (!(scale > 0)) scale = config.default_scale;
    }
    for (int a = 0; a < 3; ++a) {
      pos[3 * i + a] = Real(points[i][a]);
      ls[3 * i + a] = Real(std::log(scale));
      col[3 * i + a] = Real(logit(std::clamp(colors[i][a], 1e-3, 1.0 - 1e-3)));
    }
    rot[4 * i] = 1;
    op[i] = Real(logit(config.initial_opacity));
  }
  return GaussianCloud::from_values(std::move(pos), std::move(ls), std::move(rot), std::move(op),
                                    std::move(col));
}

}  // namespace bags
