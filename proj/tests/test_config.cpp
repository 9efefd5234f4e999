#include <filesystem>
#include <fstream>
#include <functional>

#include "doctest.h"
#include "posedepth/config.hpp"

namespace fs = std::filesystem;
using namespace posedepth;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("default config is valid and serializes losslessly") {
  const RunConfig cfg = default_run_config();
  CHECK_NOTHROW(cfg.validate());
  const Json j = to_json(cfg);
  const RunConfig back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.scene.camera_motion.size() == cfg.scene.camera_motion.size());
  CHECK(back.scene.camera_motion[5].translation == cfg.scene.camera_motion[5].translation);
  CHECK(back.optimizer.learning_rate == cfg.optimizer.learning_rate);
}

TEST_CASE("every layout and texture kind round trips") {
  RunConfig cfg = default_run_config();
  for (const LayoutKind k : {LayoutKind::SinglePlane, LayoutKind::TwoPlanes, LayoutKind::SlantedPlane}) {
    for (const TextureKind t : {TextureKind::SmoothRamp, TextureKind::BandLimitedNoise, TextureKind::Checker}) {
      cfg.scene.layout.kind = k;
      cfg.scene.texture.kind = t;
      const Json j = to_json(cfg);
      CHECK(to_json(run_config_from_json(j)) == j);
    }
  }
}

TEST_CASE("unknown keys are rejected at every level") {
  const Json base = to_json(default_run_config());
  for (const char* path : {"/extra", "/scene/extra", "/scene/intrinsics/extra", "/scene/layout/extra",
                           "/scene/texture/extra", "/network/extra", "/loss/extra", "/optimizer/extra", "/eval/extra"}) {
    Json j = base;
    j[Json::json_pointer(path)] = 1;
    INFO(path);
    CHECK(code_of([&] { run_config_from_json(j); }) == ErrorCode::ConfigParseError);
  }
  Json j = base;
  j["scene"]["layout"]["kind"] = "sphere";
  CHECK(code_of([&] { run_config_from_json(j); }) == ErrorCode::ConfigParseError);
  j = base;
  j["optimizer"]["steps"] = "many";
  CHECK(code_of([&] { run_config_from_json(j); }) == ErrorCode::ConfigParseError);
}

TEST_CASE("partial configs fall back to defaults") {
  const RunConfig r = run_config_from_json(Json::parse(R"({"optimizer": {"steps": 5}})"));
  CHECK(r.optimizer.steps == 5);
  CHECK(r.scene.width == 96);
  CHECK(r.network.query_count == default_run_config().network.query_count);
}

TEST_CASE("validation") {
  RunConfig cfg = default_run_config();
  cfg.optimizer.learning_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = default_run_config();
  cfg.optimizer.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = default_run_config();
  cfg.optimizer.batch_size = 2;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = default_run_config();
  cfg.eval.d_max_eval = cfg.eval.d_min_eval;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = default_run_config();
  cfg.loss.alpha = -0.1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = default_run_config();
  cfg.scene.camera_motion.resize(2);
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = default_run_config();
  cfg.scene.width = 90;
  cfg.scene.intrinsics.width = 90;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("seed override reaches network and optimizer") {
  RunConfig cfg = default_run_config();
  const std::uint64_t scene_seed = cfg.scene.seed;
  cfg.set_seed(42);
  CHECK(cfg.network.seed == 42);
  CHECK(cfg.optimizer.seed == 42);
  CHECK(cfg.scene.seed == scene_seed);
}

TEST_CASE("config files") {
  const fs::path dir = fs::temp_directory_path() / "posedepth_config";
  fs::create_directories(dir);
  write_json_file(dir / "c.json", to_json(default_run_config()));
  CHECK(to_json(load_run_config(dir / "c.json")) == to_json(default_run_config()));
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(code_of([&] { load_run_config(dir / "broken.json"); }) == ErrorCode::ConfigParseError);
  CHECK(code_of([&] { load_run_config(dir / "absent.json"); }) == ErrorCode::IoError);
}
