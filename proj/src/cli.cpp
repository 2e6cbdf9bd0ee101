#include "bags/cli.hpp"

#include "bags/checkpoint.hpp"
#include "bags/dataset.hpp"
#include "bags/image_io.hpp"
#include "bags/losses.hpp"
#include "bags/synth.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace bags {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

template <class T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<T>(v));
    } catch (const std::exception&) {
      throw UsageError(std::string(flag) + ": '" + item + "' is not a nonnegative integer");
    }
  }
  if (out.empty()) throw UsageError(std::string(flag) + " needs at least one value");
  return out;
}

template <class T>
std::string join(const std::vector<T>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + std::to_string(values[i]);
  return s;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

/// Turns a --config JSON object into trailing "--key=value" arguments so its
/// values win over flags given earlier on the command line.
std::vector<std::string> config_arguments(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file " + path + " must hold a JSON object");
  std::vector<std::string> out;
  for (const auto& [key, value] : j.items()) {
    std::string text;
    if (value.is_null()) continue;
    if (value.is_boolean()) {
      text = value.get<bool>() ? "true" : "false";
    } else if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_array()) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        text += (i ? "," : "") + (value[i].is_string() ? value[i].get<std::string>() : value[i].dump());
      }
    } else {
      text = value.dump();
    }
    out.push_back("--" + key + "=" + text);
  }
  return out;
}

/// Parses `args` (flags after the verb) into `app`. Returns -1 on success,
/// otherwise the exit code to return.
int parse(CLI::App& app, std::vector<std::string> args) {
  std::string config_path;
  app.add_option("--config", config_path, "JSON file whose values override flags");
  const auto extra = config_arguments(args);
  args.insert(args.end(), extra.begin(), extra.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  return -1;
}

void configure(CLI::App& app) {
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

// ---------------------------------------------------------------- synth

int cmd_synth(const std::vector<std::string>& args) {
  CLI::App app{"Generate a synthetic multi-view dataset with degraded training views", "bags synth"};
  configure(app);
  std::string out, blur = "none";
  SynthOptions opt;
  double angle = std::numeric_limits<double>::quiet_NaN();
  double focus = angle, gain = angle;
  int views = 24, resolution = 64;
  std::size_t gaussians = 300;
  std::uint64_t seed = 0;
  app.add_option("--out", out, "output dataset directory")->required();
  app.add_option("--blur", blur, "motion | defocus | mixres | none");
  app.add_option("--length", opt.blur.length, "motion blur length in pixels");
  app.add_option("--angle", angle, "motion blur angle in radians (random per view when omitted)");
  app.add_option("--focus", focus, "defocus focal depth (nearest visible depth when omitted)");
  app.add_option("--gain", gain, "defocus blur per unit depth (derived from --max-sigma when omitted)");
  app.add_option("--max-sigma", opt.blur.max_sigma, "largest defocus sigma when the gain is derived");
  app.add_option("--views", views, "number of training (and test) views");
  app.add_option("--gaussians", gaussians, "Gaussians in the procedural scene");
  app.add_option("--resolution", resolution, "image side in pixels");
  app.add_option("--seed", seed, "random seed");
  if (int rc = parse(app, args); rc >= 0) return rc;

  try {
    opt.blur.kind = parse_blur_kind(blur);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const bool motion_flags = app.count("--length") || app.count("--angle");
  const bool defocus_flags = app.count("--focus") || app.count("--gain") || app.count("--max-sigma");
  if (motion_flags && opt.blur.kind != BlurKind::motion) throw UsageError("--length/--angle need --blur motion");
  if (defocus_flags && opt.blur.kind != BlurKind::defocus) {
    throw UsageError("--focus/--gain/--max-sigma need --blur defocus");
  }
  if (opt.blur.kind == BlurKind::mixres && views < 4) throw UsageError("--blur mixres needs at least 4 views");
  if (!std::isnan(angle)) opt.blur.angle = angle;
  if (!std::isnan(focus)) opt.blur.focus_depth = focus;
  if (!std::isnan(gain)) opt.blur.gain = gain;
  opt.blur.seed = seed;
  opt.scene.views = views;
  opt.scene.resolution = resolution;
  opt.scene.gaussians = gaussians;
  try {
    opt.blur.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  write_synthetic_dataset(out, opt);
  std::cout << "wrote " << views << " train and " << views << " test views to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainFlags {
  std::string data, out, resume;
  std::string scales = "3,2,1", kernels = "5,9,17", iters = "10000,10000,20000";
  std::size_t stop_at = 0, log_every = 0;
  bool no_bpn = false, no_warmup = false, no_densify = false, absolute_position_lr = false;
};

void add_train_options(CLI::App& app, TrainFlags& f, TrainConfig& c) {
  app.add_option("--data", f.data, "dataset directory")->required();
  app.add_option("--out", f.out, "output directory")->required();
  app.add_option("--seed", c.seed, "random seed");
  app.add_option("--scales", f.scales, "comma-separated stage scales, coarse to fine");
  app.add_option("--kernels", f.kernels, "comma-separated kernel sizes per stage");
  app.add_option("--iters", f.iters, "comma-separated iterations per stage");
  app.add_option("--warmup", c.schedule.warmup_iters, "iterations at the start of each stage without blur");
  app.add_option("--kernel-warmup", c.schedule.kernel_warmup_iters,
                 "iterations after the warm-up where blurred output is used unmasked");
  app.add_flag("--no-warmup", f.no_warmup, "start blur modeling immediately in every stage");
  app.add_flag("--no-densify", f.no_densify, "disable clone/split/prune");
  app.add_flag("--no-bpn", f.no_bpn, "plain splatting baseline without blur modeling");
  app.add_flag("--detach-bpn-inputs", c.detach_bpn_inputs, "stop gradients from the network into the renderer");
  app.add_option("--w-photo", c.weights.photo, "L1 weight");
  app.add_option("--w-dssim", c.weights.dssim, "D-SSIM weight");
  app.add_option("--w-mask", c.weights.mask, "mask sparsity weight");
  app.add_option("--lr-position", c.lr.position_init, "initial position learning rate");
  app.add_option("--lr-position-final", c.lr.position_final, "final position learning rate");
  app.add_flag("--lr-position-absolute", f.absolute_position_lr, "do not scale position rates by the camera spread");
  app.add_option("--lr-scale", c.lr.scale, "log-scale learning rate");
  app.add_option("--lr-rotation", c.lr.rotation, "rotation learning rate");
  app.add_option("--lr-opacity", c.lr.opacity, "opacity learning rate");
  app.add_option("--lr-color", c.lr.color, "color learning rate");
  app.add_option("--lr-bpn", c.lr.bpn, "blur network learning rate");
  app.add_option("--densify-grad", c.densify.grad_threshold, "mean screen gradient that triggers densification");
  app.add_option("--densify-split-scale", c.densify.split_scale_threshold, "world size above which Gaussians split");
  app.add_option("--densify-prune-opacity", c.densify.opacity_prune, "opacity below which Gaussians are removed");
  app.add_option("--densify-interval", c.densify.interval, "iterations between densification passes");
  app.add_option("--densify-stop-fraction", c.densify.stop_fraction, "final fraction of each stage without densification");
  app.add_option("--max-gaussians", c.densify.max_gaussians, "densification stops growing past this count");
  app.add_option("--bpn-features", c.bpn.feat_channels, "hidden channels of the RGBD encoder");
  app.add_option("--bpn-feature-out", c.bpn.feat_out, "output channels of the RGBD encoder");
  app.add_option("--bpn-view-dim", c.bpn.view_dim, "per-view embedding width");
  app.add_option("--bpn-freqs", c.bpn.pos_freqs, "positional encoding frequencies");
  app.add_option("--bpn-hidden", c.bpn.hidden, "kernel MLP width");
  app.add_option("--bpn-head-init", c.bpn.head_init_range, "uniform init range of new kernel heads");
  app.add_option("--bpn-center-weight", c.bpn.head_center_weight, "initial kernel mass at the center tap");
  app.add_option("--init-scale", c.init.default_scale, "scale of isolated seed points");
  app.add_option("--init-opacity", c.init.initial_opacity, "initial opacity");
  app.add_option("--init-neighbours", c.init.neighbours, "neighbours used to size seed Gaussians");
  app.add_option("--resume", f.resume, "checkpoint to continue from");
  app.add_option("--stop-at", f.stop_at, "stop after this global iteration and write a checkpoint");
  app.add_option("--log-every", f.log_every, "print progress every N iterations");
}

int cmd_train(const std::vector<std::string>& args) {
  CLI::App app{"Optimize a Gaussian scene (and blur network) on a dataset", "bags train"};
  configure(app);
  TrainFlags f;
  TrainConfig config;
  add_train_options(app, f, config);
  if (int rc = parse(app, args); rc >= 0) return rc;

  const auto scales = parse_list<int>(f.scales, "--scales");
  const auto kernels = parse_list<int>(f.kernels, "--kernels");
  const auto iters = parse_list<std::size_t>(f.iters, "--iters");
  if (scales.size() != kernels.size() || scales.size() != iters.size()) {
    throw UsageError("--scales, --kernels and --iters must list the same number of stages");
  }
  config.schedule.stages.clear();
  for (std::size_t i = 0; i < scales.size(); ++i) config.schedule.stages.push_back({scales[i], kernels[i], iters[i]});
  config.use_bpn = !f.no_bpn;
  config.warmup = !f.no_warmup;
  config.densify_enabled = !f.no_densify;
  config.lr.scale_position_by_extent = !f.absolute_position_lr;
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const fs::path out(f.out);
  fs::create_directories(out);
  write_json(out / "config.json", train_config_json(config, f.data));

  const Dataset data = load_dataset(f.data, true, false);
  TrainState state;
  if (!f.resume.empty()) {
    state = load_checkpoint(f.resume);
    if (state.bpn.has_value() != config.use_bpn) {
      throw std::runtime_error("checkpoint " + f.resume + (config.use_bpn ? " has no blur network" : " has a blur network") +
                               " but the run is configured " + (config.use_bpn ? "with" : "without") + " one");
    }
    if (state.bpn && state.bpn->num_views() != data.train_cameras.size()) {
      throw std::runtime_error("checkpoint " + f.resume + " was trained on " + std::to_string(state.bpn->num_views()) +
                               " views, dataset has " + std::to_string(data.train_cameras.size()));
    }
  } else {
    state = init_training(data, config);
  }

  const std::size_t total = config.schedule.total_iterations();
  TrainHooks hooks;
  hooks.after_iteration = [&](const TrainState& s) {
    if (f.log_every && (s.iteration % f.log_every == 0 || s.iteration == total)) {
      const LossRecord& r = s.log.back();
      std::fprintf(stderr, "iter %zu/%zu scale %d loss %.5f l1 %.5f mask %.4f gaussians %zu\n", s.iteration, total,
                   r.scale, r.total, r.l1, r.mask, s.cloud.size());
    }
    return f.stop_at == 0 || s.iteration < f.stop_at;
  };
  train(state, data, config, hooks);

  save_checkpoint(out / "checkpoint.bags", state);
  write_text(out / "loss.csv", loss_csv(state.log));
  const double mask = mean_mask(state, data, config);
  write_json(out / "summary.json",
             {{"iterations", state.iteration}, {"gaussians", state.cloud.size()}, {"mean_mask", mask}});
  std::cout << "trained " << state.iteration << " iterations, " << state.cloud.size() << " Gaussians, mean mask "
            << mask << "\n";
  return 0;
}

// ---------------------------------------------------------------- render

std::vector<std::size_t> select_views(const std::string& list, std::size_t available) {
  std::vector<std::size_t> ids;
  if (list.empty()) {
    for (std::size_t i = 0; i < available; ++i) ids.push_back(i);
    return ids;
  }
  ids = parse_list<std::size_t>(list, "--views");
  for (std::size_t id : ids) {
    if (id >= available) {
      throw std::runtime_error("view " + std::to_string(id) + " does not exist (" + std::to_string(available) +
                               " views in the split)");
    }
  }
  return ids;
}

std::string view_file(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.png", id);
  return buf;
}

int cmd_render(const std::vector<std::string>& args) {
  CLI::App app{"Render clear images from a checkpoint (blur modeling bypassed)", "bags render"};
  configure(app);
  std::string checkpoint, data_dir, out, split = "test", views;
  int scale = 1;
  app.add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  app.add_option("--data", data_dir, "dataset directory holding cameras.json")->required();
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--split", split, "train | test");
  app.add_option("--views", views, "comma-separated view ids (default: all)");
  app.add_option("--scale", scale, "render scale; s renders at 1/2^(s-1) resolution");
  if (int rc = parse(app, args); rc >= 0) return rc;
  if (split != "train" && split != "test") throw UsageError("--split must be train or test");
  if (scale < 1) throw UsageError("--scale must be >= 1");

  const Dataset data = load_dataset(data_dir, false, false);
  const auto& cams = split == "train" ? data.train_cameras : data.test_cameras;
  const TrainState state = load_checkpoint(checkpoint);
  for (std::size_t id : select_views(views, cams.size())) {
    const RenderOutput r = render_forward(state.cloud, camera_at_scale(cams[id], scale));
    write_png(fs::path(out) / view_file(id), r.color);
  }
  return 0;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const std::vector<std::string>& args) {
  CLI::App app{"PSNR and SSIM of rendered images against ground truth", "bags eval"};
  configure(app);
  std::string renders, truth, out;
  app.add_option("--renders", renders, "directory of rendered PNGs")->required();
  app.add_option("--truth", truth, "directory of ground-truth PNGs with the same names")->required();
  app.add_option("--out", out, "metrics JSON file (stdout when omitted)");
  if (int rc = parse(app, args); rc >= 0) return rc;
  const json j = metrics_to_json(evaluate_directories(renders, truth));
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_json(out, j);
  }
  return 0;
}

// ---------------------------------------------------------------- export-blur

int cmd_export_blur(const std::vector<std::string>& args) {
  CLI::App app{"Export the predicted blur kernels and mask of a training view", "bags export-blur"};
  configure(app);
  std::string checkpoint, data_dir, out;
  std::size_t view = 0, lattice = 6;
  int scale = 0;
  app.add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  app.add_option("--data", data_dir, "dataset directory holding cameras.json")->required();
  app.add_option("--view", view, "training view id");
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--lattice", lattice, "kernels sampled on a P x P pixel lattice");
  app.add_option("--scale", scale, "kernel head to export (default: finest)");
  if (int rc = parse(app, args); rc >= 0) return rc;
  if (lattice == 0) throw UsageError("--lattice must be positive");

  const TrainState state = load_checkpoint(checkpoint);
  if (!state.bpn) {
    throw std::runtime_error("checkpoint " + checkpoint + " has no blur network (trained with --no-bpn)");
  }
  const BlurProposalNetwork& net = *state.bpn;
  if (net.heads().empty()) throw std::runtime_error("checkpoint " + checkpoint + " has no kernel heads yet");
  if (scale == 0) {
    scale = net.heads().front().scale;
    for (const auto& h : net.heads()) scale = std::min(scale, h.scale);
  }
  if (!net.has_head(scale)) throw std::runtime_error("no kernel head for scale " + std::to_string(scale));
  const Dataset data = load_dataset(data_dir, false, false);
  if (view >= data.train_cameras.size()) {
    throw std::runtime_error("training view " + std::to_string(view) + " does not exist");
  }
  const RenderOutput r = render_forward(state.cloud, camera_at_scale(data.train_cameras[view], scale));
  const BlurField field = net.propose(r.color, r.depth, view, scale);
  const std::size_t h = field.height, w = field.width, k = static_cast<std::size_t>(field.kernel_size);
  const fs::path dir(out);
  write_png(dir / "mask.png", field.mask);

  auto kd = field.kernels.data();
  auto md = field.mask.data();
  std::vector<Real> grid(lattice * k * lattice * k, Real(0));
  json samples = json::array();
  for (std::size_t ly = 0; ly < lattice; ++ly) {
    for (std::size_t lx = 0; lx < lattice; ++lx) {
      const std::size_t y = std::min(h - 1, (2 * ly + 1) * h / (2 * lattice));
      const std::size_t x = std::min(w - 1, (2 * lx + 1) * w / (2 * lattice));
      const Real* kp = kd.data() + (y * w + x) * k * k;
      const Real peak = *std::max_element(kp, kp + k * k);
      std::vector<double> values(kp, kp + k * k);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          grid[(ly * k + i) * lattice * k + lx * k + j] = peak > 0 ? kp[i * k + j] / peak : Real(0);
        }
      }
      samples.push_back({{"x", x}, {"y", y}, {"mask", double(md[y * w + x])}, {"kernel", values}});
    }
  }
  write_png(dir / "kernels.png", Tensor::from({lattice * k, lattice * k}, std::move(grid)));
  write_json(dir / "kernels.json", {{"view", view},
                                    {"scale", scale},
                                    {"kernel_size", k},
                                    {"lattice", lattice},
                                    {"width", w},
                                    {"height", h},
                                    {"samples", samples}});
  return 0;
}

void print_usage(std::ostream& os) {
  os << "usage: bags <command> [options]\n\n"
        "commands:\n"
        "  synth        generate a synthetic dataset\n"
        "  train        optimize a scene on a dataset\n"
        "  render       render clear views from a checkpoint\n"
        "  eval         compute PSNR/SSIM of renders against ground truth\n"
        "  export-blur  write predicted kernels and mask for a training view\n\n"
        "run 'bags <command> --help' for the options of a command\n";
}

}  // namespace

json train_config_json(const TrainConfig& c, const std::string& data_dir) {
  std::vector<int> scales, kernels;
  std::vector<std::size_t> iters;
  for (const Stage& s : c.schedule.stages) {
    scales.push_back(s.scale);
    kernels.push_back(s.kernel_size);
    iters.push_back(s.iterations);
  }
  return {{"data", data_dir},
          {"seed", c.seed},
          {"scales", join(scales)},
          {"kernels", join(kernels)},
          {"iters", join(iters)},
          {"warmup", c.schedule.warmup_iters},
          {"kernel-warmup", c.schedule.kernel_warmup_iters},
          {"no-warmup", !c.warmup},
          {"no-densify", !c.densify_enabled},
          {"no-bpn", !c.use_bpn},
          {"detach-bpn-inputs", c.detach_bpn_inputs},
          {"w-photo", c.weights.photo},
          {"w-dssim", c.weights.dssim},
          {"w-mask", c.weights.mask},
          {"lr-position", c.lr.position_init},
          {"lr-position-final", c.lr.position_final},
          {"lr-position-absolute", !c.lr.scale_position_by_extent},
          {"lr-scale", c.lr.scale},
          {"lr-rotation", c.lr.rotation},
          {"lr-opacity", c.lr.opacity},
          {"lr-color", c.lr.color},
          {"lr-bpn", c.lr.bpn},
          {"densify-grad", c.densify.grad_threshold},
          {"densify-split-scale", c.densify.split_scale_threshold},
          {"densify-prune-opacity", c.densify.opacity_prune},
          {"densify-interval", c.densify.interval},
          {"densify-stop-fraction", c.densify.stop_fraction},
          {"max-gaussians", c.densify.max_gaussians},
          {"bpn-features", c.bpn.feat_channels},
          {"bpn-feature-out", c.bpn.feat_out},
          {"bpn-view-dim", c.bpn.view_dim},
          {"bpn-freqs", c.bpn.pos_freqs},
          {"bpn-hidden", c.bpn.hidden},
          {"bpn-head-init", c.bpn.head_init_range},
          {"bpn-center-weight", c.bpn.head_center_weight},
          {"init-scale", c.init.default_scale},
          {"init-opacity", c.init.initial_opacity},
          {"init-neighbours", c.init.neighbours}};
}

Metrics evaluate_directories(const fs::path& renders, const fs::path& truth) {
  auto ids = [](const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
    std::set<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".png") out.insert(e.path().stem().string());
    }
    return out;
  };
  const auto a = ids(renders), b = ids(truth);
  if (a != b) {
    std::string missing;
    for (const auto& id : a) {
      if (!b.count(id)) missing += " " + id + " (no ground truth)";
    }
    for (const auto& id : b) {
      if (!a.count(id)) missing += " " + id + " (no render)";
    }
    throw std::runtime_error("view ids differ between " + renders.string() + " and " + truth.string() + ":" + missing);
  }
  if (a.empty()) throw std::runtime_error("no PNG images in " + renders.string());
  Metrics m;
  for (const auto& id : a) {
    const Tensor r = read_png(renders / (id + ".png"));
    const Tensor t = read_png(truth / (id + ".png"));
    if (r.shape() != t.shape()) {
      throw std::runtime_error("view " + id + ": render is " + to_string(r.shape()) + ", ground truth is " +
                               to_string(t.shape()));
    }
    m.rows.push_back({id, psnr(r, t), double(ssim(r, t).item())});
  }
  for (const MetricsRow& row : m.rows) {
    m.mean_psnr += row.psnr;
    m.mean_ssim += row.ssim;
  }
  m.mean_psnr /= double(m.rows.size());
  m.mean_ssim /= double(m.rows.size());
  return m;
}

namespace {

json psnr_json(double v) {
  return is_psnr_sentinel(v) ? json("inf") : json(v);
}

double psnr_from(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() != "inf") throw std::runtime_error("metrics: bad psnr value " + j.dump());
    return std::numeric_limits<double>::infinity();
  }
  return j.get<double>();
}

}  // namespace

json metrics_to_json(const Metrics& m) {
  json rows = json::array();
  for (const MetricsRow& r : m.rows) rows.push_back({{"view", r.id}, {"psnr", psnr_json(r.psnr)}, {"ssim", r.ssim}});
  return {{"views", rows}, {"mean", {{"psnr", psnr_json(m.mean_psnr)}, {"ssim", m.mean_ssim}}}};
}

Metrics metrics_from_json(const json& j) {
  Metrics m;
  try {
    for (const json& r : j.at("views")) {
      m.rows.push_back({r.at("view").get<std::string>(), psnr_from(r.at("psnr")), r.at("ssim").get<double>()});
    }
    m.mean_psnr = psnr_from(j.at("mean").at("psnr"));
    m.mean_ssim = j.at("mean").at("ssim").get<double>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed metrics JSON: ") + e.what());
  }
  return m;
}

int run_cli(const std::vector<std::string>& args) {
  if (args.size() < 2 || args[1] == "--help" || args[1] == "-h") {
    print_usage(args.size() < 2 ? std::cerr : std::cout);
    return args.size() < 2 ? 1 : 0;
  }
  const std::string verb = args[1];
  const std::vector<std::string> rest(args.begin() + 2, args.end());
  try {
    if (verb == "synth") return cmd_synth(rest);
    if (verb == "train") return cmd_train(rest);
    if (verb == "render") return cmd_render(rest);
    if (verb == "eval") return cmd_eval(rest);
    if (verb == "export-blur") return cmd_export_blur(rest);
    std::cerr << "unknown command '" << verb << "'\n";
    print_usage(std::cerr);
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\nrun 'bags " << verb << " --help' for usage\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace bags
