#include "bags/synth.hpp"

#include "bags/dataset.hpp"
#include "bags/image_io.hpp"
#include "bags/imaging.hpp"
#include "bags/ply.hpp"
#include "bags/rasterizer.hpp"
#include "bags/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace bags {

namespace {

constexpr double kMaxDefocusSigma = 4.0;
constexpr double kIdentitySigma = 0.05;
constexpr int kMaxDefocusRadius = 8;

Eigen::Vector3d ring_eye(double radius, double azimuth) {
  return {radius * std::sin(azimuth), 0.0, radius * std::cos(azimuth)};
}

Camera ring_camera(const ToySceneConfig& cfg, double azimuth) {
  const double f = 1.25 * cfg.resolution;
  return look_at(ring_eye(cfg.ring_radius, azimuth), Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY(), f, f,
                 cfg.resolution, cfg.resolution);
}

std::string view_path(const char* split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s/%04zu.png", split, index);
  return buf;
}

}  // namespace

ToyScene make_toy_scene(std::uint64_t seed, const ToySceneConfig& config) {
  if (config.gaussians < 10) throw std::invalid_argument("make_toy_scene: need at least 10 Gaussians");
  if (config.views < 1 || config.resolution < 8) {
    throw std::invalid_argument("make_toy_scene: need at least one view of at least 8 px");
  }
  Rng rng = make_rng(seed, "toy_scene");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = config.gaussians;
  std::vector<Real> pos(3 * n), ls(3 * n), rot(4 * n), op(n), col(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector3d p;
    do {
      p = {2 * unit(rng) - 1, 2 * unit(rng) - 1, 2 * unit(rng) - 1};
    } while (p.norm() > 1.0);
    p *= 0.9;
    for (int a = 0; a < 3; ++a) {
      pos[3 * i + a] = Real(p[a]);
      ls[3 * i + a] = Real(std::log(0.03) + unit(rng) * std::log(4.0));
      col[3 * i + a] = Real(logit(0.05 + 0.9 * unit(rng)));
    }
    Eigen::Vector4d q(normal(rng), normal(rng), normal(rng), normal(rng));
    q.normalize();
    for (int a = 0; a < 4; ++a) rot[4 * i + a] = Real(q[a]);
    op[i] = Real(logit(0.6 + 0.39 * unit(rng)));
  }
  ToyScene scene{GaussianCloud::from_values(std::move(pos), std::move(ls), std::move(rot), std::move(op),
                                            std::move(col)),
                 {},
                 {}};
  const double step = 2 * std::numbers::pi / config.views;
  for (int v = 0; v < config.views; ++v) {
    Camera train = ring_camera(config, v * step);
    train.view_index = v;
    train.image_path = view_path("train", static_cast<std::size_t>(v));
    scene.train_cameras.push_back(train);
    Camera test = ring_camera(config, (v + 0.5) * step);
    test.view_index = v;
    test.image_path = view_path("test", static_cast<std::size_t>(v));
    scene.test_cameras.push_back(test);
  }
  return scene;
}

Tensor motion_kernel(double angle, double length) {
  if (!(length >= 0)) throw std::invalid_argument("motion_kernel: length must be >= 0");
  if (length == 0) return Tensor::full({1, 1}, Real(1));
  const int r = static_cast<int>(std::ceil(length / 2)) + 1;
  const int k = 2 * r + 1;
  std::vector<double> acc(static_cast<std::size_t>(k * k), 0.0);
  const double dx = std::cos(angle), dy = std::sin(angle);
  const int samples = static_cast<int>(std::ceil(length * 32)) + 1;
  // Bilinear splats of evenly spaced points along the segment.
  for (int s = 0; s < samples; ++s) {
    const double t = (double(s) / (samples - 1) - 0.5) * length;
    const double px = t * dx + r, py = t * dy + r;
    const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
    const double fx = px - x0, fy = py - y0;
    for (int oy = 0; oy < 2; ++oy) {
      for (int ox = 0; ox < 2; ++ox) {
        const int x = x0 + ox, y = y0 + oy;
        if (x < 0 || y < 0 || x >= k || y >= k) continue;
        acc[static_cast<std::size_t>(y * k + x)] += (ox ? fx : 1 - fx) * (oy ? fy : 1 - fy);
      }
    }
  }
  double total = 0;
  for (double a : acc) total += a;
  std::vector<Real> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = Real(acc[i] / total);
  return Tensor::from({std::size_t(k), std::size_t(k)}, std::move(out));
}

Tensor degrade_motion(const Tensor& image, double angle, double length) {
  if (!(length >= 0)) throw std::invalid_argument("degrade_motion: length must be >= 0");
  if (length == 0) return image.detach();
  return convolve(image, motion_kernel(angle, length));
}

Tensor degrade_defocus(const Tensor& image, const Tensor& depth, double focus_depth, double gain) {
  if (!(gain >= 0)) throw std::invalid_argument("degrade_defocus: gain must be >= 0");
  if (image.dim() != 3 || depth.dim() != 2 || depth.size(0) != image.size(1) || depth.size(1) != image.size(2)) {
    throw ShapeError("degrade_defocus", image.shape(), depth.shape());
  }
  const int c = static_cast<int>(image.size(0)), h = static_cast<int>(image.size(1)),
            w = static_cast<int>(image.size(2));
  auto in = image.data();
  auto dep = depth.data();
  std::vector<Real> out(in.begin(), in.end());
  std::vector<double> weights;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sigma =
          std::min(kMaxDefocusSigma, gain * std::abs(double(dep[std::size_t(y) * w + x]) - focus_depth));
      if (sigma < kIdentitySigma) continue;
      const int r = std::min(kMaxDefocusRadius, static_cast<int>(std::ceil(3 * sigma)));
      const int k = 2 * r + 1;
      weights.assign(static_cast<std::size_t>(k * k), 0.0);
      double total = 0;
      for (int oy = -r; oy <= r; ++oy) {
        for (int ox = -r; ox <= r; ++ox) {
          const double wt = std::exp(-(ox * ox + oy * oy) / (2 * sigma * sigma));
          weights[static_cast<std::size_t>((oy + r) * k + ox + r)] = wt;
          total += wt;
        }
      }
      for (int ch = 0; ch < c; ++ch) {
        const Real* p = in.data() + std::size_t(ch) * h * w;
        double s = 0;
        for (int oy = -r; oy <= r; ++oy) {
          const int sy = std::clamp(y + oy, 0, h - 1);
          for (int ox = -r; ox <= r; ++ox) {
            const int sx = std::clamp(x + ox, 0, w - 1);
            s += weights[static_cast<std::size_t>((oy + r) * k + ox + r)] * p[std::size_t(sy) * w + sx];
          }
        }
        out[(std::size_t(ch) * h + y) * w + x] = Real(s / total);
      }
    }
  }
  return Tensor::from(image.shape(), std::move(out));
}

MixresResult degrade_mixres(const std::vector<Tensor>& images, std::uint64_t seed) {
  const std::size_t n = images.size();
  if (n < 4) throw std::invalid_argument("degrade_mixres: need at least 4 views, got " + std::to_string(n));
  Rng rng = make_rng(seed, "mixres");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  static constexpr int kFactors[4] = {4, 3, 2, 1};
  MixresResult result;
  result.images.resize(n);
  result.factors.resize(n);
  for (std::size_t rank = 0; rank < n; ++rank) {
    const std::size_t v = order[rank];
    const int factor = kFactors[rank * 4 / n];
    result.factors[v] = factor;
    if (factor == 1) {
      result.images[v] = images[v].detach();
    } else {
      const Tensor small = downsample(images[v], factor);
      result.images[v] = upsample_bilinear(small, images[v].size(1), images[v].size(2));
    }
  }
  return result;
}

std::string to_string(BlurKind kind) {
  switch (kind) {
    case BlurKind::none: return "none";
    case BlurKind::motion: return "motion";
    case BlurKind::defocus: return "defocus";
    case BlurKind::mixres: return "mixres";
  }
  return "none";
}

BlurKind parse_blur_kind(const std::string& text) {
  if (text == "none") return BlurKind::none;
  if (text == "motion") return BlurKind::motion;
  if (text == "defocus") return BlurKind::defocus;
  if (text == "mixres") return BlurKind::mixres;
  throw std::invalid_argument("unknown blur kind '" + text + "' (expected motion, defocus, mixres or none)");
}

void BlurSpec::validate() const {
  if (!(length >= 0)) throw std::invalid_argument("blur length must be >= 0");
  if (gain && !(*gain >= 0)) throw std::invalid_argument("defocus gain must be >= 0");
  if (!(max_sigma >= 0)) throw std::invalid_argument("defocus max sigma must be >= 0");
}

void write_synthetic_dataset(const std::filesystem::path& dir, const SynthOptions& options) {
  options.blur.validate();
  const ToyScene scene = make_toy_scene(options.blur.seed, options.scene);
  std::filesystem::create_directories(dir / "train");
  std::filesystem::create_directories(dir / "test");

  const RasterConfig raster;
  auto render_clean = [&](const Camera& cam) { return render_forward(scene.cloud, cam, raster); };

  std::vector<RenderOutput> train;
  for (const Camera& cam : scene.train_cameras) train.push_back(render_clean(cam));
  for (const Camera& cam : scene.test_cameras) write_png(dir / cam.image_path, render_clean(cam).color);

  const std::size_t views = train.size();
  nlohmann::json record;
  record["kind"] = to_string(options.blur.kind);
  record["seed"] = options.blur.seed;
  nlohmann::json per_view = nlohmann::json::array();
  std::vector<Tensor> degraded(views);
  const BlurSpec& blur = options.blur;

  switch (blur.kind) {
    case BlurKind::none:
      for (std::size_t v = 0; v < views; ++v) {
        degraded[v] = train[v].color;
        per_view.push_back({{"view", v}});
      }
      break;
    case BlurKind::motion: {
      Rng rng = make_rng(blur.seed, "motion");
      std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
      for (std::size_t v = 0; v < views; ++v) {
        const double theta = blur.angle ? *blur.angle : angle(rng);
        degraded[v] = degrade_motion(train[v].color, theta, blur.length);
        per_view.push_back({{"view", v}, {"angle", theta}, {"length", blur.length}});
      }
      break;
    }
    case BlurKind::defocus: {
      // Depth of the visible surface: expected depth divided by coverage,
      // background pixels take the farthest visible depth of their view.
      std::vector<Tensor> depth(views);
      double nearest = INFINITY, farthest = 0;
      for (std::size_t v = 0; v < views; ++v) {
        auto d = train[v].depth.data();
        auto a = train[v].alpha.data();
        std::vector<Real> surf(d.size(), Real(0));
        double view_far = 0;
        for (std::size_t i = 0; i < d.size(); ++i) {
          if (a[i] > Real(0.01)) {
            surf[i] = d[i] / a[i];
            view_far = std::max(view_far, double(surf[i]));
            nearest = std::min(nearest, double(surf[i]));
          }
        }
        for (std::size_t i = 0; i < d.size(); ++i) {
          if (!(a[i] > Real(0.01))) surf[i] = Real(view_far);
        }
        farthest = std::max(farthest, view_far);
        depth[v] = Tensor::from(train[v].depth.shape(), std::move(surf));
      }
      if (!std::isfinite(nearest)) nearest = farthest = options.scene.ring_radius;
      const double focus = blur.focus_depth ? *blur.focus_depth : nearest;
      double gain = 0;
      if (blur.gain) {
        gain = *blur.gain;
      } else if (farthest - focus > 1e-9) {
        gain = blur.max_sigma / (farthest - focus);
      }
      for (std::size_t v = 0; v < views; ++v) {
        degraded[v] = degrade_defocus(train[v].color, depth[v], focus, gain);
        per_view.push_back({{"view", v}, {"focus_depth", focus}, {"gain", gain}});
      }
      break;
    }
    case BlurKind::mixres: {
      std::vector<Tensor> colors;
      for (const auto& r : train) colors.push_back(r.color);
      MixresResult mixed = degrade_mixres(colors, blur.seed);
      for (std::size_t v = 0; v < views; ++v) {
        degraded[v] = mixed.images[v];
        per_view.push_back({{"view", v}, {"factor", mixed.factors[v]}});
      }
      break;
    }
  }
  for (std::size_t v = 0; v < views; ++v) write_png(dir / scene.train_cameras[v].image_path, degraded[v]);
  record["views"] = per_view;

  std::vector<Camera> cameras = scene.train_cameras;
  cameras.insert(cameras.end(), scene.test_cameras.begin(), scene.test_cameras.end());
  write_cameras(dir / "cameras.json", cameras);

  Rng rng = make_rng(blur.seed, "seed_points");
  std::normal_distribution<double> jitter(0.0, options.seed_jitter);
  const std::size_t n = scene.cloud.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(options.seed_fraction * n)));
  order.resize(std::min(keep, n));
  std::sort(order.begin(), order.end());
  PointCloud points;
  for (std::size_t i : order) {
    points.points.push_back(scene.cloud.position(i) +
                            Eigen::Vector3d(jitter(rng), jitter(rng), jitter(rng)));
    points.colors.push_back(scene.cloud.color(i));
  }
  write_ply(dir / "points.ply", points);

  std::ofstream out(dir / "degradation.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "degradation.json").string());
  out << record.dump(2) << "\n";
}

}  // namespace bags
