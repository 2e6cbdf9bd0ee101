#include "bags/checkpoint.hpp"
#include "bags/cli.hpp"
#include "bags/dataset.hpp"
#include "bags/image_io.hpp"
#include "bags/ply.hpp"
#include "bags/rasterizer.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

using namespace bags;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch() {
  static const fs::path root = [] {
    const fs::path p = fs::temp_directory_path() / ("bags_io_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the CLI with `args`; stderr goes to `<scratch>/stderr.txt`.
int bags_cli(const std::string& args) {
  const std::string cmd = std::string(BAGS_CLI) + " " + args + " > /dev/null 2> " + (scratch() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_stderr() { return slurp(scratch() / "stderr.txt"); }

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Every regular file below `dir`, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

// A four-view 64 px motion dataset and a 30-iteration run on it, shared by the CLI tests.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = scratch() / "ds";
    run_ = scratch() / "run";
    ASSERT_EQ(bags_cli("synth --out " + data_.string() + " --blur motion --views 4 --gaussians 40 --seed 3"), 0);
    ASSERT_EQ(bags_cli("train --data " + data_.string() + " --out " + run_.string() + " --iters 10,10,10 --seed 2"), 0);
  }
  static std::string data() { return data_.string(); }
  static fs::path run() { return run_; }

  static inline fs::path data_, run_;
};

}  // namespace

TEST(Png, RoundTripIsExactOnEightBitValues) {
  std::mt19937_64 rng(1);
  std::vector<Real> v(3 * 5 * 7);
  for (Real& x : v) x = Real(rng() % 256) / 255;
  const Tensor img = Tensor::from({3, 5, 7}, v);
  const fs::path p = scratch() / "rt.png";
  write_png(p, img);
  const Tensor back = read_png(p);
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(back[i], v[i], 1e-12);
}

TEST(Png, GrayIsReplicatedAndValuesAreClamped) {
  const fs::path p = scratch() / "gray.png";
  write_png(p, Tensor::from({2, 2}, {-1, 0.5, 1, 3}));
  const Tensor back = read_png(p);
  ASSERT_EQ(back.shape(), (Shape{3, 2, 2}));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(back[c * 4 + 0], 0);
    EXPECT_NEAR(back[c * 4 + 1], 128.0 / 255, 1e-12);
    EXPECT_EQ(back[c * 4 + 2], 1);
    EXPECT_EQ(back[c * 4 + 3], 1);
  }
  EXPECT_THROW(read_png(scratch() / "absent.png"), std::runtime_error);
}

TEST(Ply, BinaryRoundTrip) {
  PointCloud cloud;
  cloud.points = {{0.5, -1.25, 2}, {1e-3, 3, -7}};
  cloud.colors = {{1, 0, 0.2}, {0, 1, 1}};
  const fs::path p = scratch() / "cloud.ply";
  write_ply(p, cloud);
  const PointCloud back = read_ply(p);
  ASSERT_EQ(back.points.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_LT((back.points[i] - cloud.points[i]).norm(), 1e-6);
    EXPECT_LT((back.colors[i] - cloud.colors[i]).cwiseAbs().maxCoeff(), 0.5 / 255 + 1e-12);
  }
}

TEST(Ply, AsciiWithAndWithoutColor) {
  const fs::path a = scratch() / "ascii.ply";
  spit(a,
       "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
       "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n1 2 3 255 0 51\n-1 0.5 0 0 255 0\n");
  const PointCloud c = read_ply(a);
  ASSERT_EQ(c.points.size(), 2u);
  EXPECT_EQ(c.points[1], Eigen::Vector3d(-1, 0.5, 0));
  EXPECT_NEAR(c.colors[0].z(), 0.2, 1e-12);

  const fs::path b = scratch() / "plain.ply";
  spit(b, "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n4 5 6\n");
  EXPECT_EQ(read_ply(b).points.at(0), Eigen::Vector3d(4, 5, 6));

  const fs::path bad = scratch() / "bad.ply";
  spit(bad, "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n");
  EXPECT_THROW(read_ply(bad), std::runtime_error);
}

TEST(Cameras, JsonRoundTrip) {
  std::vector<Camera> cams{look_at({0, 0, 3}, {0, 0, 0}, {0, 1, 0}, 50, 60, 64, 48),
                           look_at({2, 1, 2}, {0, 0, 0}, {0, 1, 0}, 40, 40, 32, 32)};
  cams[0].image_path = "train/0000.png";
  cams[1].image_path = "test/0000.png";
  const fs::path p = scratch() / "cameras.json";
  write_cameras(p, cams);
  const auto back = read_cameras(p);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_LT((back[i].rotation - cams[i].rotation).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((back[i].translation - cams[i].translation).norm(), 1e-12);
    EXPECT_EQ(back[i].fx, cams[i].fx);
    EXPECT_EQ(back[i].cy, cams[i].cy);
    EXPECT_EQ(back[i].width, cams[i].width);
    EXPECT_EQ(back[i].height, cams[i].height);
    EXPECT_EQ(back[i].image_path, cams[i].image_path);
  }
}

TEST_F(Cli, DatasetErrorsNameTheFileOrField) {
  const fs::path broken = scratch() / "broken";
  fs::remove_all(broken);
  fs::copy(data_, broken, fs::copy_options::recursive);

  fs::remove(broken / "train" / "0002.png");
  try {
    load_dataset(broken);
    ADD_FAILURE() << "missing image accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("0002.png"), std::string::npos) << e.what();
  }

  json cams = json::parse(slurp(broken / "cameras.json"));
  cams[1].erase("fx");
  spit(broken / "cameras.json", cams.dump());
  try {
    load_dataset(broken);
    ADD_FAILURE() << "camera without fx accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("fx"), std::string::npos) << e.what();
  }

  fs::remove(broken / "cameras.json");
  try {
    load_dataset(broken);
    ADD_FAILURE() << "dataset without cameras accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("cameras.json"), std::string::npos) << e.what();
  }
}

TEST_F(Cli, CheckpointReloadsAndRewritesIdentically) {
  const fs::path ck = run() / "checkpoint.bags";
  const TrainState state = load_checkpoint(ck);
  EXPECT_EQ(state.iteration, 30u);
  EXPECT_EQ(state.log.size(), 30u);
  ASSERT_TRUE(state.bpn.has_value());
  const fs::path again = scratch() / "again.bags";
  save_checkpoint(again, state);
  EXPECT_EQ(slurp(again), slurp(ck));
  EXPECT_EQ(checkpoint_sections(ck), (std::vector<std::string>{"CLUD", "BPN_", "OPTM", "SCHD", "RNG_", "LOG_"}));

  const std::string bytes = slurp(ck);
  spit(scratch() / "truncated.bags", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_checkpoint(scratch() / "truncated.bags"), std::runtime_error);
  spit(scratch() / "foreign.bags", "PNG and other things");
  EXPECT_THROW(load_checkpoint(scratch() / "foreign.bags"), std::runtime_error);
}

TEST_F(Cli, SynthIsByteIdenticalAcrossInvocations) {
  const fs::path a = scratch() / "synth_a", b = scratch() / "synth_b";
  ASSERT_EQ(bags_cli("synth --out " + a.string() + " --blur none --seed 1"), 0);
  ASSERT_EQ(bags_cli("synth --out " + b.string() + " --blur none --seed 1"), 0);
  const auto ta = tree(a), tb = tree(b);
  EXPECT_EQ(ta.size(), 3u + 48u);
  EXPECT_TRUE(ta == tb);
}

TEST_F(Cli, SynthMotionWritesBothSplitsIntoNewNestedDirectory) {
  const fs::path out = scratch() / "nested" / "deeper" / "motion";
  ASSERT_FALSE(fs::exists(out.parent_path()));
  ASSERT_EQ(bags_cli("synth --out " + out.string() + " --blur motion --length 6 --views 24 --seed 4"), 0);
  std::size_t train = 0, test = 0;
  for (const auto& e : fs::directory_iterator(out / "train")) train += e.path().extension() == ".png";
  for (const auto& e : fs::directory_iterator(out / "test")) test += e.path().extension() == ".png";
  EXPECT_EQ(train, 24u);
  EXPECT_EQ(test, 24u);
  const Dataset d = load_dataset(out);
  EXPECT_EQ(d.train_cameras.size(), 24u);
  EXPECT_EQ(d.points.points.size() > 0, true);
}

TEST_F(Cli, TrainWritesThirtyLossRowsAndConfig) {
  const std::string csv = slurp(run() / "loss.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 31);
  EXPECT_EQ(csv.rfind("iter,scale,l1,dssim,mask,total\n", 0), 0u);
  const json cfg = json::parse(slurp(run() / "config.json"));
  EXPECT_EQ(cfg.at("iters"), "10,10,10");
  EXPECT_EQ(cfg.at("seed"), 2);
  const json summary = json::parse(slurp(run() / "summary.json"));
  EXPECT_EQ(summary.at("iterations"), 30);
}

TEST_F(Cli, BaselineCheckpointHasNoNetworkSection) {
  const fs::path out = scratch() / "baseline";
  ASSERT_EQ(bags_cli("train --data " + data() + " --out " + out.string() + " --iters 10,10,10 --no-bpn"), 0);
  const auto sections = checkpoint_sections(out / "checkpoint.bags");
  EXPECT_EQ(std::count(sections.begin(), sections.end(), "BPN_"), 0);
  EXPECT_EQ(std::count(sections.begin(), sections.end(), "CLUD"), 1);

  EXPECT_EQ(bags_cli("export-blur --checkpoint " + (out / "checkpoint.bags").string() + " --data " + data() +
                     " --out " + (scratch() / "exp_none").string()),
            2);
  EXPECT_NE(last_stderr().find("no blur network"), std::string::npos) << last_stderr();
}

TEST_F(Cli, ResumeContinuesAtTheSavedIteration) {
  const fs::path part = scratch() / "part", rest = scratch() / "rest";
  ASSERT_EQ(bags_cli("train --data " + data() + " --out " + part.string() + " --iters 10,10,10 --seed 2 --stop-at 14"), 0);
  EXPECT_EQ(load_checkpoint(part / "checkpoint.bags").iteration, 14u);
  ASSERT_EQ(bags_cli("train --data " + data() + " --out " + rest.string() + " --iters 10,10,10 --seed 2 --resume " +
                     (part / "checkpoint.bags").string()),
            0);
  EXPECT_EQ(slurp(rest / "loss.csv"), slurp(run() / "loss.csv"));
  EXPECT_EQ(slurp(rest / "checkpoint.bags"), slurp(run() / "checkpoint.bags"));

  EXPECT_EQ(bags_cli("train --data " + data() + " --out " + rest.string() + " --iters 10,10,10 --no-bpn --resume " +
                     (part / "checkpoint.bags").string()),
            2);
}

TEST_F(Cli, ConfigSnapshotReproducesTheRun) {
  const fs::path out = scratch() / "from_config";
  ASSERT_EQ(bags_cli("train --config " + (run() / "config.json").string() + " --data " + data() + " --out " + out.string()),
            0);
  EXPECT_EQ(slurp(out / "loss.csv"), slurp(run() / "loss.csv"));
  EXPECT_EQ(slurp(out / "checkpoint.bags"), slurp(run() / "checkpoint.bags"));
}

TEST_F(Cli, RenderIsCleanDeterministicAndScales) {
  const std::string ck = (run() / "checkpoint.bags").string();
  const fs::path a = scratch() / "render_a", b = scratch() / "render_b", half = scratch() / "render_half";
  ASSERT_EQ(bags_cli("render --checkpoint " + ck + " --data " + data() + " --out " + a.string() + " --split train"), 0);
  ASSERT_EQ(bags_cli("render --checkpoint " + ck + " --data " + data() + " --out " + b.string() + " --split train"), 0);
  EXPECT_TRUE(tree(a) == tree(b));
  EXPECT_EQ(tree(a).size(), 4u);

  // The written view is the sharp render of the cloud; the network is not applied.
  const TrainState state = load_checkpoint(ck);
  const Dataset d = load_dataset(data(), false, false);
  const Tensor expected = render_forward(state.cloud, d.train_cameras[1]).color;
  const Tensor got = read_png(a / "0001.png");
  ASSERT_EQ(got.shape(), expected.shape());
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], expected[i], 0.5 / 255 + 1e-4);

  ASSERT_EQ(bags_cli("render --checkpoint " + ck + " --data " + data() + " --out " + half.string() + " --scale 2 --views 0,3"),
            0);
  const Tensor small = read_png(half / "0003.png");
  EXPECT_EQ(small.shape(), (Shape{3, 32, 32}));
  EXPECT_FALSE(fs::exists(half / "0001.png"));

  EXPECT_EQ(bags_cli("render --checkpoint " + ck + " --data " + data() + " --out " + half.string() + " --views 9"), 2);
  EXPECT_NE(last_stderr().find("view 9"), std::string::npos) << last_stderr();
}

TEST_F(Cli, EvalAgainstItselfAndMeanOfRows) {
  const fs::path truth = data_ / "test", self = scratch() / "self.json";
  ASSERT_EQ(bags_cli("eval --renders " + truth.string() + " --truth " + truth.string() + " --out " + self.string()), 0);
  const json j = json::parse(slurp(self));
  const Metrics m = metrics_from_json(j);
  ASSERT_EQ(m.rows.size(), 4u);
  for (const MetricsRow& r : m.rows) {
    EXPECT_TRUE(std::isinf(r.psnr));
    EXPECT_NEAR(r.ssim, 1.0, 1e-12);
  }
  EXPECT_EQ(j.dump().find("\"inf\"") != std::string::npos, true);

  const fs::path renders = scratch() / "eval_renders", out = scratch() / "eval.json";
  ASSERT_EQ(bags_cli("render --checkpoint " + (run() / "checkpoint.bags").string() + " --data " + data() + " --out " +
                     renders.string()),
            0);
  ASSERT_EQ(bags_cli("eval --renders " + renders.string() + " --truth " + truth.string() + " --out " + out.string()), 0);
  const json ej = json::parse(slurp(out));
  const Metrics em = metrics_from_json(ej);
  double ps = 0, ss = 0;
  for (const MetricsRow& r : em.rows) {
    ps += r.psnr;
    ss += r.ssim;
  }
  EXPECT_NEAR(em.mean_psnr, ps / double(em.rows.size()), 1e-9);
  EXPECT_NEAR(em.mean_ssim, ss / double(em.rows.size()), 1e-12);
  EXPECT_EQ(metrics_to_json(em), ej);

  // The CLI computes in single precision.
  const Metrics direct = evaluate_directories(renders, truth);
  EXPECT_NEAR(direct.mean_psnr, em.mean_psnr, 1e-4);
  EXPECT_NEAR(direct.mean_ssim, em.mean_ssim, 1e-5);

  fs::remove(renders / "0002.png");
  EXPECT_EQ(bags_cli("eval --renders " + renders.string() + " --truth " + truth.string()), 2);
  EXPECT_NE(last_stderr().find("0002"), std::string::npos) << last_stderr();
}

TEST_F(Cli, ExportBlurOfFreshHeadsShowsCenterTaps) {
  // Thirty iterations stay inside the scene warm-up, so every head keeps its initial near-delta state.
  const fs::path out = scratch() / "export";
  fs::create_directories(out);
  ASSERT_EQ(bags_cli("export-blur --checkpoint " + (run() / "checkpoint.bags").string() + " --data " + data() +
                     " --view 1 --lattice 3 --out " + out.string()),
            0);
  const Tensor mask = read_png(out / "mask.png");
  EXPECT_EQ(mask.shape(), (Shape{3, 64, 64}));
  const Tensor grid = read_png(out / "kernels.png");
  const std::size_t k = 17, side = 3 * k;
  ASSERT_EQ(grid.shape(), (Shape{3, side, side}));
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const bool center = y % k == k / 2 && x % k == k / 2;
      EXPECT_EQ(grid[y * side + x], center ? 1.0 : 0.0) << "at " << y << "," << x;
    }
  const json meta = json::parse(slurp(out / "kernels.json"));
  EXPECT_EQ(meta.at("samples").size(), 9u);
  EXPECT_EQ(meta.at("kernel_size"), 17);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(bags_cli("--help"), 0);
  EXPECT_EQ(bags_cli("frobnicate"), 1);
  EXPECT_EQ(bags_cli(""), 1);
  EXPECT_EQ(bags_cli("synth"), 1);
  EXPECT_EQ(bags_cli("synth --out " + (scratch() / "x").string() + " --blur haze"), 1);
  EXPECT_EQ(bags_cli("synth --out " + (scratch() / "x").string() + " --blur none --length 3"), 1);
  EXPECT_EQ(bags_cli("train --data " + data() + " --out " + (scratch() / "x").string() + " --kernels 5,9,15"), 1);
  EXPECT_NE(last_stderr().find("17"), std::string::npos) << last_stderr();
  EXPECT_EQ(bags_cli("train --data " + (scratch() / "nowhere").string() + " --out " + (scratch() / "x").string()), 2);
  EXPECT_EQ(bags_cli("render --checkpoint " + (scratch() / "none.bags").string() + " --data " + data() + " --out " +
                     (scratch() / "x").string()),
            2);
}
