#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "posedepth/dtn.hpp"
#include "posedepth/geometry.hpp"
#include "posedepth/image_io.hpp"
#include "posedepth/synthdata.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace posedepth;
using posedepth::test::random_tensor;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("posedepth_synth_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double masked_mean_abs(const Tensor& a, const Tensor& b, const Tensor& valid) {
  double acc = 0, n = 0;
  const Index hw = valid.numel();
  for (Index c = 0; c < a.dim(0); ++c)
    for (Index p = 0; p < hw; ++p)
      if (valid[p] > 0) {
        acc += std::abs(a[c * hw + p] - b[c * hw + p]);
        n += 1;
      }
  return acc / n;
}

SceneConfig small_scene(LayoutKind kind) {
  SceneConfig s;
  s.width = 16;
  s.height = 8;
  s.intrinsics = {8.0, 8.0, 7.5, 3.5, 16, 8};
  s.layout.kind = kind;
  s.camera_motion = lateral_motion({0.25, 0.25});
  return s;
}

}  // namespace

TEST_CASE("fronto-parallel plane has constant depth") {
  SceneConfig s = small_scene(LayoutKind::SinglePlane);
  s.layout.depth = 2.5;
  const RenderedFrame f = render_frame(s, Pose::identity());
  CHECK((f.depth.data() == 2.5).all());
  CHECK(f.image.shape() == Shape{3, 8, 16});
  CHECK(f.image.data().minCoeff() >= 0.0);
  CHECK(f.image.data().maxCoeff() <= 1.0);
}

TEST_CASE("slanted plane depth follows the ray-plane formula") {
  SceneConfig s = small_scene(LayoutKind::SlantedPlane);
  s.layout.normal = {0.05, -0.3, 1.0};
  s.layout.offset = 4.0;
  const RenderedFrame f = render_frame(s, Pose::identity());
  const auto& K = s.intrinsics;
  for (Index v = 0; v < 8; ++v)
    for (Index u = 0; u < 16; ++u) {
      const Eigen::Vector3d ray((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
      CHECK(std::abs(f.depth.at({v, u}) - s.layout.offset / s.layout.normal.dot(ray)) <= 1e-12);
    }
  // Inverse depth is affine in the pixel coordinates.
  for (Index v = 1; v + 1 < 8; ++v) {
    const double dd = 1 / f.depth.at({v + 1, 3}) - 2 / f.depth.at({v, 3}) + 1 / f.depth.at({v - 1, 3});
    CHECK(std::abs(dd) <= 1e-12);
  }
}

TEST_CASE("rays that miss the scene are reported") {
  SceneConfig s = small_scene(LayoutKind::SlantedPlane);
  s.layout.normal = {1.0, 0.0, 0.0};
  s.layout.offset = 4.0;
  try {
    render_frame(s, Pose::identity());
    FAIL("expected DegenerateGeometry");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateGeometry);
  }
}

TEST_CASE("two planes give exactly two depths at the split row") {
  const SceneConfig s = default_scene();
  for (Index t = 0; t < static_cast<Index>(s.camera_motion.size()); ++t) {
    const RenderedFrame f = render_frame(s, s.camera_motion[static_cast<std::size_t>(t)]);
    const std::set<double> values(f.depth.data().begin(), f.depth.data().end());
    REQUIRE(values.size() == 2);
    CHECK(values.count(s.layout.d1) == 1);
    CHECK(values.count(s.layout.d2) == 1);
    Index upper_rows = 0;
    for (Index v = 0; v < s.height; ++v) {
      const Buffer row = f.depth.data().segment(v * s.width, s.width);
      CHECK((row == row[0]).all());
      if (row[0] == s.layout.d1) ++upper_rows;
    }
    CHECK(std::abs(static_cast<double>(upper_rows) - s.layout.split_fraction * s.height) <= 1.0);
  }
}

TEST_CASE("default scene shifts by whole pixels") {
  const SceneConfig s = default_scene();
  CHECK(s.camera_motion.size() == 12);
  for (std::size_t i = 1; i < s.camera_motion.size(); ++i) {
    const double step = s.camera_motion[i].translation.x() - s.camera_motion[i - 1].translation.x();
    CHECK((step == 0.125 || step == 0.25));
    for (const double d : {s.layout.d1, s.layout.d2}) {
      const double px = s.intrinsics.fx * step / d;
      CHECK(px == std::round(px));
    }
  }
}

TEST_CASE("generation consistency on every triple") {
  for (const std::uint64_t seed : {0u, 1u, 2u}) {
    const SceneConfig s = default_scene(12, seed);
    for (Index t = 1; t + 1 < 12; ++t) {
      const FrameTriple tr = generate_triple(s, t);
      for (const auto& [src, pose] : {std::pair{tr.prev, tr.gt_pose_prev}, std::pair{tr.next, tr.gt_pose_next}}) {
        const SynthesizedView v = synthesize_view(src, tr.gt_depth, pose, s.intrinsics);
        INFO("seed " << seed << " frame " << t);
        CHECK(v.valid.data().mean() >= 0.8);
        CHECK(masked_mean_abs(v.image, tr.current, v.valid) < 1e-6);
      }
    }
  }
}

TEST_CASE("zero motion triples") {
  SceneConfig s = small_scene(LayoutKind::TwoPlanes);
  s.camera_motion = {Pose::identity(), Pose::identity(), Pose::identity()};
  const FrameTriple tr = generate_triple(s, 1);
  CHECK((tr.prev.data() == tr.current.data()).all());
  CHECK((tr.next.data() == tr.current.data()).all());
  CHECK(tr.gt_pose_prev.matrix().isIdentity(0.0));
  CHECK(tr.gt_pose_next.matrix().isIdentity(0.0));
  CHECK_THROWS_AS(generate_triple(s, 0), Error);
  CHECK_THROWS_AS(generate_triple(s, 2), Error);
}

TEST_CASE("lateral translation on a plane shifts the image by fx * tx / d") {
  SceneConfig s = small_scene(LayoutKind::SinglePlane);
  s.layout.depth = 2.0;
  s.camera_motion = lateral_motion({0.5, 0.5});  // 8 * 0.5 / 2 = 2 px
  const FrameTriple tr = generate_triple(s, 1);
  for (Index c = 0; c < 3; ++c)
    for (Index v = 0; v < 8; ++v)
      for (Index u = 0; u + 2 < 16; ++u) CHECK(std::abs(tr.next.at({c, v, u}) - tr.current.at({c, v, u + 2})) <= 1e-12);
}

TEST_CASE("rendering is deterministic and seed dependent") {
  const SceneConfig a = default_scene(12, 5);
  const auto f1 = render_all(a), f2 = render_all(a);
  for (std::size_t i = 0; i < f1.size(); ++i) {
    CHECK((f1[i].image.data() == f2[i].image.data()).all());
    CHECK((f1[i].depth.data() == f2[i].depth.data()).all());
  }
  const auto f3 = render_all(default_scene(12, 6));
  CHECK((f1[0].image.data() != f3[0].image.data()).any());
}

TEST_CASE("netpbm files") {
  const fs::path dir = scratch("pnm");
  write_ppm(dir / "white.ppm", Tensor::full({3, 2, 2}, 1.0));
  std::ifstream in(dir / "white.ppm", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const std::string header = "P6\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 12);
  CHECK(bytes.substr(0, header.size()) == header);
  for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(static_cast<unsigned char>(bytes[i]) == 0xFF);

  std::mt19937_64 rng(30);
  const Tensor img = random_tensor(rng, {3, 5, 7}, 0, 1);
  write_ppm(dir / "r.ppm", img);
  const Tensor back = read_ppm(dir / "r.ppm");
  CHECK(back.shape() == img.shape());
  CHECK((back.data() - img.data()).abs().maxCoeff() <= 1.0 / 255);
  const Tensor gray = random_tensor(rng, {4, 6}, 0, 1);
  write_pgm(dir / "g.pgm", gray);
  CHECK((read_pgm(dir / "g.pgm").data() - gray.data()).abs().maxCoeff() <= 1.0 / 255);

  std::ofstream(dir / "bad.ppm") << "P3\n2 2\n255\n";
  try {
    read_ppm(dir / "bad.ppm");
    FAIL("expected MalformedHeader");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedHeader);
  }
  std::ofstream(dir / "short.ppm", std::ios::binary) << "P6\n2 2\n255\n\xff\xff";
  CHECK_THROWS_AS(read_ppm(dir / "short.ppm"), Error);
  try {
    read_ppm(dir / "missing.ppm");
    FAIL("expected IoError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoError);
  }
}

TEST_CASE("DTN1 round trip is exact at float32") {
  std::mt19937_64 rng(31);
  const Tensor t = random_tensor(rng, {4, 3, 5}, -10, 10);
  std::stringstream ss;
  write_dtn(ss, t);
  const std::string blob = ss.str();
  CHECK(blob.substr(0, 4) == "DTN1");
  CHECK(blob.size() == 4 + 4 + 3 * 4 + 60 * 4);
  const Tensor back = read_dtn(ss);
  CHECK(back.shape() == t.shape());
  for (Index i = 0; i < t.numel(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(t[i])));

  std::stringstream again;
  write_dtn(again, back);
  CHECK(again.str() == blob);

  std::stringstream junk("XXXX");
  CHECK_THROWS_AS(read_dtn(junk), Error);
}

TEST_CASE("scene directories round trip") {
  const fs::path dir = scratch("dir");
  const SceneConfig s = default_scene(5, 3);
  write_scene_directory(dir, s);
  CHECK(fs::exists(dir / "scene.json"));
  CHECK(fs::exists(dir / "poses.json"));
  CHECK(fs::exists(dir / "frames" / (frame_file_stem(4) + ".ppm")));
  CHECK(fs::exists(dir / "depth" / (frame_file_stem(4) + ".dtn")));

  const SceneDirectory d = read_scene_directory(dir);
  const auto frames = render_all(s);
  REQUIRE(d.images.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK((d.images[i].data() - frames[i].image.data()).abs().maxCoeff() <= 1.0 / 255);
    CHECK((d.depths[i].data() == frames[i].depth.data()).all());
    CHECK(d.poses[i].matrix() == s.camera_motion[i].matrix());
  }
  CHECK(d.config.width == s.width);
  CHECK(d.config.layout.d1 == s.layout.d1);
}
