#include "bags/rasterizer.hpp"

#include "bags/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bags {
namespace {

struct Contribution {
  std::uint32_t index;  // into projected
  double gauss;
  double alpha;         // opacity * gauss
  double transmittance; // before this contribution
};

// Walks the depth-sorted list of one tile for pixel (px, py). Calls
// `emit` for each contribution and returns the final transmittance.
template <typename Emit>
double composite_pixel(const std::vector<Projected2D>& projected, const std::vector<std::uint32_t>& list,
                       int px, int py, const RasterConfig& cfg, Emit&& emit) {
  const double sx = px + 0.5, sy = py + 0.5;
  double t = 1.0;
  for (std::uint32_t idx : list) {
    const Projected2D& g = projected[idx];
    const double dx = sx - g.center.x(), dy = sy - g.center.y();
    const double power = -0.5 * (g.conic[0] * dx * dx + g.conic[2] * dy * dy) - g.conic[1] * dx * dy;
    if (power > 0) continue;
    const double gauss = std::exp(power);
    const double a = g.opacity * gauss;
    if (a < cfg.alpha_cutoff) continue;
    const double next_t = t * (1.0 - a);
    if (next_t < cfg.min_transmittance) break;
    emit(Contribution{idx, gauss, a, t});
    t = next_t;
  }
  return t;
}

}  // namespace

std::vector<Projected2D> project(const GaussianCloud& cloud, const Camera& camera,
                                 const RasterConfig& config, ProjectStats* stats) {
  camera.validate();
  std::vector<Projected2D> out;
  out.reserve(cloud.size());
  ProjectStats local;
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    const Eigen::Vector3d cam = camera.rotation * cloud.position(n) + camera.translation;
    if (cam.z() <= config.near_plane) {
      ++local.culled_near;
      continue;
    }
    const double opacity = cloud.opacity(n);
    // alpha * G never reaches the cutoff.
    if (opacity * 1.0 < config.alpha_cutoff) {
      ++local.culled_transparent;
      continue;
    }
    const double x = cam.x(), y = cam.y(), z = cam.z();
    Eigen::Matrix<double, 2, 3> jac;
    jac << camera.fx / z, 0, -camera.fx * x / (z * z),
           0, camera.fy / z, -camera.fy * y / (z * z);
    const Eigen::Matrix<double, 2, 3> t = jac * camera.rotation;
    Eigen::Matrix2d cov = t * covariance(cloud, n) * t.transpose();
    cov(0, 0) += config.dilation;
    cov(1, 1) += config.dilation;
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));

    Projected2D p;
    p.center = {camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy};
    p.cov = cov;
    p.depth = z;
    p.color = cloud.color(n);
    p.opacity = opacity;
    p.source = n;
    p.cam_mean = cam;
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
    p.conic = {cov(1, 1) / det, -cov(0, 1) / det, cov(0, 0) / det};
    const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
    const double lambda_max = mid + std::sqrt(std::max(0.1, mid * mid - det));
    p.radius = std::sqrt(lambda_max * 2.0 * std::log(opacity / config.alpha_cutoff));

    const double x0 = p.center.x() - p.radius, x1 = p.center.x() + p.radius;
    const double y0 = p.center.y() - p.radius, y1 = p.center.y() + p.radius;
    // Pixel centers sit at i + 0.5.
    if (x1 < 0.5 || y1 < 0.5 || x0 > camera.width - 0.5 || y0 > camera.height - 0.5) {
      ++local.culled_offscreen;
      continue;
    }
    out.push_back(p);
  }
  if (stats) *stats = local;
  return out;
}

void sort_by_depth(std::vector<Projected2D>& projected) {
  std::stable_sort(projected.begin(), projected.end(),
                   [](const Projected2D& a, const Projected2D& b) { return a.depth < b.depth; });
}

RenderOutput rasterize(std::vector<Projected2D> projected, const Camera& camera, const RasterConfig& config,
                       std::shared_ptr<RasterState>* state_out) {
  camera.validate();
  for (std::size_t i = 1; i < projected.size(); ++i) {
    if (projected[i].depth < projected[i - 1].depth) {
      throw std::invalid_argument("rasterize: projected Gaussians are not sorted by depth (entry " +
                                  std::to_string(i) + ")");
    }
  }
  const int w = camera.width, h = camera.height, ts = config.tile_size;
  auto state = std::make_shared<RasterState>();
  state->camera = camera;
  state->config = config;
  state->tiles_x = (w + ts - 1) / ts;
  state->tiles_y = (h + ts - 1) / ts;
  state->tiles.assign(static_cast<std::size_t>(state->tiles_x * state->tiles_y), {});
  for (std::size_t i = 0; i < projected.size(); ++i) {
    const Projected2D& p = projected[i];
    const int px0 = std::max(0, static_cast<int>(std::ceil(p.center.x() - p.radius - 0.5)));
    const int px1 = std::min(w - 1, static_cast<int>(std::floor(p.center.x() + p.radius - 0.5)));
    const int py0 = std::max(0, static_cast<int>(std::ceil(p.center.y() - p.radius - 0.5)));
    const int py1 = std::min(h - 1, static_cast<int>(std::floor(p.center.y() + p.radius - 0.5)));
    if (px0 > px1 || py0 > py1) continue;
    for (int ty = py0 / ts; ty <= py1 / ts; ++ty) {
      for (int tx = px0 / ts; tx <= px1 / ts; ++tx) {
        state->tiles[static_cast<std::size_t>(ty * state->tiles_x + tx)].push_back(static_cast<std::uint32_t>(i));
      }
    }
  }
  state->projected = std::move(projected);

  const std::size_t hw = static_cast<std::size_t>(w) * h;
  std::vector<Real> color(3 * hw), depth(hw), alpha(hw);
  for (int ty = 0; ty < state->tiles_y; ++ty) {
    for (int tx = 0; tx < state->tiles_x; ++tx) {
      const auto& list = state->tiles[static_cast<std::size_t>(ty * state->tiles_x + tx)];
      for (int py = ty * ts; py < std::min(h, (ty + 1) * ts); ++py) {
        for (int px = tx * ts; px < std::min(w, (tx + 1) * ts); ++px) {
          Eigen::Vector3d c = Eigen::Vector3d::Zero();
          double d = 0;
          const double t = composite_pixel(state->projected, list, px, py, config, [&](const Contribution& k) {
            const Projected2D& g = state->projected[k.index];
            const double wgt = k.alpha * k.transmittance;
            c += wgt * g.color;
            d += wgt * g.depth;
          });
          c += t * config.background;
          const std::size_t pix = static_cast<std::size_t>(py) * w + px;
          for (int ch = 0; ch < 3; ++ch) color[ch * hw + pix] = Real(c[ch]);
          depth[pix] = Real(d);
          alpha[pix] = Real(1.0 - t);
        }
      }
    }
  }
  if (state_out) *state_out = state;
  const auto uh = static_cast<std::size_t>(h), uw = static_cast<std::size_t>(w);
  return {Tensor::from({3, uh, uw}, std::move(color)), Tensor::from({uh, uw}, std::move(depth)),
          Tensor::from({uh, uw}, std::move(alpha))};
}

CloudGradients rasterize_backward(std::span<const Real> grad_color, std::span<const Real> grad_depth,
                                  std::span<const Real> grad_alpha, const RasterState& state,
                                  const GaussianCloud& cloud) {
  const Camera& cam = state.camera;
  const RasterConfig& cfg = state.config;
  const int w = cam.width, h = cam.height, ts = cfg.tile_size;
  const std::size_t hw = static_cast<std::size_t>(w) * h;
  if (grad_color.size() != 3 * hw || grad_depth.size() != hw || grad_alpha.size() != hw) {
    throw std::invalid_argument("rasterize_backward: upstream gradients do not match the " +
                                std::to_string(w) + "x" + std::to_string(h) + " forward pass");
  }
  if (cloud.size() != state.cloud_size) {
    throw std::invalid_argument("rasterize_backward: cloud has " + std::to_string(cloud.size()) +
                                " Gaussians, forward pass saw " + std::to_string(state.cloud_size));
  }

  const std::size_t np = state.projected.size();
  std::vector<Eigen::Vector2d> g_mean(np, Eigen::Vector2d::Zero());
  std::vector<Eigen::Vector3d> g_conic(np, Eigen::Vector3d::Zero());
  std::vector<Eigen::Vector3d> g_color(np, Eigen::Vector3d::Zero());
  std::vector<double> g_opacity(np, 0.0), g_depth(np, 0.0);

  std::vector<Contribution> contribs;
  for (int ty = 0; ty < state.tiles_y; ++ty) {
    for (int tx = 0; tx < state.tiles_x; ++tx) {
      const auto& list = state.tiles[static_cast<std::size_t>(ty * state.tiles_x + tx)];
      if (list.empty()) continue;
      for (int py = ty * ts; py < std::min(h, (ty + 1) * ts); ++py) {
        for (int px = tx * ts; px < std::min(w, (tx + 1) * ts); ++px) {
          const std::size_t pix = static_cast<std::size_t>(py) * w + px;
          const Eigen::Vector3d gc(grad_color[pix], grad_color[hw + pix], grad_color[2 * hw + pix]);
          const double gd = grad_depth[pix], ga = grad_alpha[pix];
          if (gc.isZero(0) && gd == 0 && ga == 0) continue;
          contribs.clear();
          const double t_final = composite_pixel(state.projected, list, px, py, cfg,
                                                 [&](const Contribution& k) { contribs.push_back(k); });
          (void)t_final;
          // Value composited behind the current contribution, starting from
          // the background term; A = 1 - T_final contributes -gA.
          double behind = gc.dot(cfg.background) - ga;
          const double sx = px + 0.5, sy = py + 0.5;
          for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
            const Projected2D& g = state.projected[it->index];
            const double value = gc.dot(g.color) + gd * g.depth;
            const double d_a = it->transmittance * (value - behind);
            behind = it->alpha * value + (1.0 - it->alpha) * behind;

            const double wgt = it->alpha * it->transmittance;
            g_color[it->index] += wgt * gc;
            g_depth[it->index] += wgt * gd;
            g_opacity[it->index] += d_a * it->gauss;
            const double d_power = d_a * g.opacity * it->gauss;
            const double dx = sx - g.center.x(), dy = sy - g.center.y();
            g_mean[it->index] += d_power * Eigen::Vector2d(g.conic[0] * dx + g.conic[1] * dy,
                                                           g.conic[1] * dx + g.conic[2] * dy);
            g_conic[it->index] += d_power * Eigen::Vector3d(-0.5 * dx * dx, -dx * dy, -0.5 * dy * dy);
          }
        }
      }
    }
  }

  CloudGradients out;
  const std::size_t n = cloud.size();
  out.positions.assign(3 * n, 0.0);
  out.log_scales.assign(3 * n, 0.0);
  out.rotations.assign(4 * n, 0.0);
  out.opacity_logits.assign(n, 0.0);
  out.color_logits.assign(3 * n, 0.0);
  out.screen_grad_norm.assign(n, 0.0);
  out.visible.assign(n, 0);

  for (std::size_t i = 0; i < np; ++i) {
    const Projected2D& p = state.projected[i];
    const std::size_t s = p.source;
    out.visible[s] = 1;

    // Color and opacity through their sigmoids.
    for (int c = 0; c < 3; ++c) out.color_logits[3 * s + c] = g_color[i][c] * p.color[c] * (1.0 - p.color[c]);
    out.opacity_logits[s] = g_opacity[i] * p.opacity * (1.0 - p.opacity);

    // Conic -> 2-D covariance: dSigma = -Q dQ Q with symmetric dQ.
    Eigen::Matrix2d q;
    q << p.conic[0], p.conic[1], p.conic[1], p.conic[2];
    Eigen::Matrix2d gq;
    gq << g_conic[i][0], 0.5 * g_conic[i][1], 0.5 * g_conic[i][1], g_conic[i][2];
    const Eigen::Matrix2d g_cov2 = -q * gq * q;

    const double x = p.cam_mean.x(), y = p.cam_mean.y(), z = p.cam_mean.z();
    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx / z, 0, -cam.fx * x / (z * z),
           0, cam.fy / z, -cam.fy * y / (z * z);
    const Eigen::Matrix<double, 2, 3> tm = jac * cam.rotation;
    const Eigen::Matrix3d sigma = covariance(cloud, s);

    const Eigen::Matrix3d g_sigma = tm.transpose() * g_cov2 * tm;
    const Eigen::Matrix<double, 2, 3> g_t = 2.0 * g_cov2 * tm * sigma;
    const Eigen::Matrix<double, 2, 3> g_j = g_t * cam.rotation.transpose();

    Eigen::Vector3d g_cam = Eigen::Vector3d::Zero();
    const double z2 = z * z, z3 = z2 * z;
    g_cam.x() += g_j(0, 2) * (-cam.fx / z2);
    g_cam.y() += g_j(1, 2) * (-cam.fy / z2);
    g_cam.z() += g_j(0, 0) * (-cam.fx / z2) + g_j(0, 2) * (2.0 * cam.fx * x / z3) +
                 g_j(1, 1) * (-cam.fy / z2) + g_j(1, 2) * (2.0 * cam.fy * y / z3);
    const Eigen::Vector2d gm = g_mean[i];
    g_cam.x() += gm.x() * cam.fx / z;
    g_cam.y() += gm.y() * cam.fy / z;
    g_cam.z() += -gm.x() * cam.fx * x / z2 - gm.y() * cam.fy * y / z2;
    g_cam.z() += g_depth[i];

    const Eigen::Vector3d g_pos = cam.rotation.transpose() * g_cam;
    for (int a = 0; a < 3; ++a) out.positions[3 * s + a] = g_pos[a];

    // Sigma = M M^T, M = R(q) diag(scale).
    const Eigen::Vector4d q_raw = cloud.quaternion(s);
    const double qn = q_raw.norm();
    const Eigen::Vector4d qh = q_raw / qn;
    const Eigen::Matrix3d rq = quaternion_to_matrix(q_raw);
    const Eigen::Vector3d scale = cloud.scale(s);
    const Eigen::Matrix3d m = rq * scale.asDiagonal();
    const Eigen::Matrix3d g_m = 2.0 * g_sigma * m;
    for (int k = 0; k < 3; ++k) {
      out.log_scales[3 * s + k] = scale[k] * g_m.col(k).dot(rq.col(k));
    }
    const Eigen::Matrix3d g_r = g_m * scale.asDiagonal();
    const double qw = qh[0], qx = qh[1], qy = qh[2], qz = qh[3];
    Eigen::Matrix3d dw, dxm, dym, dzm;
    dw << 0, -qz, qy, qz, 0, -qx, -qy, qx, 0;
    dxm << 0, qy, qz, qy, -2 * qx, -qw, qz, qw, -2 * qx;
    dym << -2 * qy, qx, qw, qx, 0, qz, -qw, qz, -2 * qy;
    dzm << -2 * qz, -qw, qx, qw, -2 * qz, qy, qx, qy, 0;
    const Eigen::Vector4d g_qh(2 * g_r.cwiseProduct(dw).sum(), 2 * g_r.cwiseProduct(dxm).sum(),
                               2 * g_r.cwiseProduct(dym).sum(), 2 * g_r.cwiseProduct(dzm).sum());
    const Eigen::Vector4d g_q = (g_qh - qh * qh.dot(g_qh)) / qn;
    for (int k = 0; k < 4; ++k) out.rotations[4 * s + k] = g_q[k];

    out.screen_grad_norm[s] = std::hypot(gm.x() * 0.5 * w, gm.y() * 0.5 * h);
  }
  return out;
}

Camera camera_at_scale(const Camera& camera, int scale) {
  if (scale < 1) throw std::invalid_argument("scale index must be >= 1, got " + std::to_string(scale));
  const int factor = 1 << (scale - 1);
  Camera c = camera.downscaled(factor);
  if (c.width < 8 || c.height < 8) {
    throw std::invalid_argument("scale " + std::to_string(scale) + " reduces " + std::to_string(camera.width) +
                                "x" + std::to_string(camera.height) + " below 8 px");
  }
  return c;
}

RenderOutput render(const GaussianCloud& cloud, const Camera& camera, const RasterConfig& config,
                    std::shared_ptr<ScreenGradSink> sink) {
  auto projected = project(cloud, camera, config);
  sort_by_depth(projected);
  std::shared_ptr<RasterState> state;
  RenderOutput fwd = rasterize(std::move(projected), camera, config, &state);
  state->cloud_size = cloud.size();

  const std::size_t h = static_cast<std::size_t>(camera.height), w = static_cast<std::size_t>(camera.width);
  const std::size_t hw = h * w;
  std::vector<Real> packed(5 * hw);
  std::copy(fwd.color.data().begin(), fwd.color.data().end(), packed.begin());
  std::copy(fwd.depth.data().begin(), fwd.depth.data().end(), packed.begin() + 3 * hw);
  std::copy(fwd.alpha.data().begin(), fwd.alpha.data().end(), packed.begin() + 4 * hw);

  const GaussianCloud ref = cloud;  // shares the leaf tensors
  Tensor all = Tensor::make_result(
      {5, h, w}, std::move(packed),
      {cloud.positions, cloud.log_scales, cloud.rotations, cloud.opacity_logits, cloud.color_logits},
      [state, ref, sink, hw](const detail::TensorImpl& o) {
        std::span<const Real> g(o.grad);
        CloudGradients grads = rasterize_backward(g.subspan(0, 3 * hw), g.subspan(3 * hw, hw),
                                                  g.subspan(4 * hw, hw), *state, ref);
        auto push = [](const Tensor& t, const std::vector<double>& v) {
          if (!t.requires_grad()) return;
          std::vector<Real> r(v.begin(), v.end());
          t.accumulate_grad(r);
        };
        push(ref.positions, grads.positions);
        push(ref.log_scales, grads.log_scales);
        push(ref.rotations, grads.rotations);
        push(ref.opacity_logits, grads.opacity_logits);
        push(ref.color_logits, grads.color_logits);
        if (sink) {
          sink->screen_grad_norm = std::move(grads.screen_grad_norm);
          sink->visible = std::move(grads.visible);
        }
      },
      "rasterize");

  if (!all.requires_grad()) return fwd;
  return {narrow(all, 0, 3), reshape(narrow(all, 3, 1), {h, w}), reshape(narrow(all, 4, 1), {h, w})};
}

RenderOutput render_forward(const GaussianCloud& cloud, const Camera& camera, const RasterConfig& config) {
  auto projected = project(cloud, camera, config);
  sort_by_depth(projected);
  return rasterize(std::move(projected), camera, config);
}

RenderOutput render_at_scale(const GaussianCloud& cloud, const Camera& camera, int scale,
                             const RasterConfig& config, std::shared_ptr<ScreenGradSink> sink) {
  return render(cloud, camera_at_scale(camera, scale), config, std::move(sink));
}

}  // namespace bags
