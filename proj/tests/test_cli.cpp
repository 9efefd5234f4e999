#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "posedepth/config.hpp"
#include "posedepth/dtn.hpp"
#include "posedepth/image_io.hpp"
#include "posedepth/synthdata.hpp"

namespace fs = std::filesystem;
using namespace posedepth;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "posedepth_cli";

int run(const std::string& args) {
  const std::string cmd = std::string(POSEDEPTH_CLI) + " " + args + " > " + (kRoot / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<double> fields(const std::string& line) {
  std::vector<double> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(std::stod(f));
  return out;
}

// Small scene and network so the whole pipeline runs in well under a second.
fs::path small_config() {
  RunConfig cfg = default_run_config();
  cfg.scene.width = 32;
  cfg.scene.height = 16;
  cfg.scene.intrinsics = {16.0, 16.0, 15.5, 7.5, 32, 16};
  cfg.scene.camera_motion = lateral_motion({0.25, 0.125, 0.25, 0.25});
  cfg.network.encoder_channels = {4, 6, 8};
  cfg.network.decoder_channels = {6, 4};
  cfg.network.feature_channels = 4;
  cfg.network.query_count = 4;
  cfg.network.pose_encoder_channels = {4, 8};
  cfg.optimizer.steps = 5;
  const fs::path p = kRoot / "small.json";
  write_json_file(p, to_json(cfg));
  return p;
}

struct Fixture {
  Fixture() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "usage errors exit with 1") {
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("gen") == 1);
  CHECK(run("gen --out " + (kRoot / "x").string() + " --bogus") == 1);
  CHECK(run("infer --checkpoint " + kRoot.string() + " --image /nonexistent.ppm --out " + kRoot.string()) == 1);
  std::ofstream(kRoot / "bad.json") << R"({"optimizer": {"stepz": 3}})";
  CHECK(run("gen --config " + (kRoot / "bad.json").string() + " --out " + (kRoot / "g").string()) == 1);
  CHECK(run("--help") == 0);
}

TEST_CASE_FIXTURE(Fixture, "gen writes the configured number of frames deterministically") {
  const fs::path a = kRoot / "a", b = kRoot / "b";
  REQUIRE(run("gen --out " + a.string()) == 0);
  REQUIRE(run("gen --out " + b.string()) == 0);
  Index frames = 0;
  for (const auto& e : fs::directory_iterator(a / "frames")) {
    ++frames;
    CHECK(slurp(e.path()) == slurp(b / "frames" / e.path().filename()));
  }
  CHECK(frames == 12);
  Index depths = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(a / "depth")) ++depths;
  CHECK(depths == 12);
  CHECK(slurp(a / "poses.json") == slurp(b / "poses.json"));
  CHECK(read_scene_directory(a).images[0].shape() == Shape{3, 32, 96});
}

TEST_CASE_FIXTURE(Fixture, "train, infer and eval on a small scene") {
  const fs::path cfg = small_config();
  const fs::path scene = kRoot / "scene", runa = kRoot / "runa", runb = kRoot / "runb";
  REQUIRE(run("gen --config " + cfg.string() + " --out " + scene.string()) == 0);
  REQUIRE(run("train --config " + cfg.string() + " --scene " + scene.string() + " --out " + runa.string()) == 0);
  REQUIRE(run("train --config " + cfg.string() + " --scene " + scene.string() + " --out " + runb.string()) == 0);

  CHECK(fs::exists(runa / "config.json"));
  const auto log = lines(runa / "train_log.csv");
  REQUIRE(log.size() == 6);
  CHECK(log[0] == "step,frame,total,photometric,smoothness,mask_coverage");
  const double lambda = load_run_config(cfg).loss.lambda_s;
  for (std::size_t i = 1; i < log.size(); ++i) {
    const auto f = fields(log[i]);
    REQUIRE(f.size() == 6);
    CHECK(f[0] == static_cast<double>(i));
    CHECK(std::abs(f[2] - (f[3] + lambda * f[4])) <= 1e-10);
    CHECK(f[5] >= 0.0);
    CHECK(f[5] <= 1.0);
  }
  for (const auto& e : fs::directory_iterator(runa / "checkpoint")) {
    CHECK(slurp(e.path()) == slurp(runb / "checkpoint" / e.path().filename()));
  }

  const fs::path infer = kRoot / "infer";
  REQUIRE(run("infer --checkpoint " + (runa / "checkpoint").string() + " --image " +
              (scene / "frames" / (frame_file_stem(2) + ".ppm")).string() + " --out " + infer.string()) == 0);
  const Tensor depth = read_dtn(infer / "depth.dtn");
  CHECK(depth.shape() == Shape{16, 32});
  CHECK(depth.data().minCoeff() > 0.1);
  CHECK(depth.data().maxCoeff() < 10.0);
  CHECK(read_pgm(infer / "depth.pgm").shape() == Shape{16, 32});

  write_ppm(kRoot / "wrong.ppm", Tensor::full({3, 8, 8}, 0.5));
  CHECK(run("infer --checkpoint " + (runa / "checkpoint").string() + " --image " + (kRoot / "wrong.ppm").string() +
            " --out " + infer.string()) == 1);

  const fs::path eva = kRoot / "eva", evb = kRoot / "evb";
  REQUIRE(run("eval --config " + cfg.string() + " --checkpoint " + (runa / "checkpoint").string() + " --scene " +
              scene.string() + " --out " + eva.string()) == 0);
  REQUIRE(run("eval --config " + cfg.string() + " --checkpoint " + (runb / "checkpoint").string() + " --scene " +
              scene.string() + " --out " + evb.string()) == 0);
  const auto rows = lines(eva / "metrics.csv");
  REQUIRE(rows.size() == 1 + 5 + 1);  // header, five frames, mean
  CHECK(rows[0] == "frame,abs_rel,sq_rel,rmse,rmse_log,a1,a2,a3");
  CHECK(rows.back().rfind("mean,", 0) == 0);
  CHECK(slurp(eva / "metrics.csv") == slurp(evb / "metrics.csv"));

  // Eval against a checkpoint on a differently sized scene.
  REQUIRE(run("gen --out " + (kRoot / "big").string()) == 0);
  CHECK(run("eval --checkpoint " + (runa / "checkpoint").string() + " --scene " + (kRoot / "big").string() + " --out " +
            (kRoot / "evc").string()) == 1);

  // Non-finite weights make evaluation a numerical failure.
  const fs::path broken = kRoot / "broken";
  fs::copy(runa / "checkpoint", broken);
  write_dtn(broken / "depth.feat.bias.dtn", Tensor::full({4}, NAN));
  CHECK(run("eval --config " + cfg.string() + " --checkpoint " + broken.string() + " --scene " + scene.string() +
            " --out " + (kRoot / "evd").string()) == 2);
}

TEST_CASE_FIXTURE(Fixture, "seed override changes the trained weights") {
  const fs::path cfg = small_config();
  const fs::path a = kRoot / "s1", b = kRoot / "s2";
  REQUIRE(run("train --config " + cfg.string() + " --seed 1 --out " + a.string()) == 0);
  REQUIRE(run("train --config " + cfg.string() + " --seed 2 --out " + b.string()) == 0);
  CHECK(slurp(a / "checkpoint" / "depth.enc0.weight.dtn") != slurp(b / "checkpoint" / "depth.enc0.weight.dtn"));
}

TEST_CASE_FIXTURE(Fixture, "gradcheck subcommand") {
  CHECK(run("gradcheck --seeds 2 --only add conv2d") == 0);
  CHECK(slurp(kRoot / "last.log").find("all gradients within tolerance") != std::string::npos);
  CHECK(run("gradcheck --seeds 2 --only conv2d --corrupt conv2d") == 2);
}
