#include "posedepth/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

#include "posedepth/config.hpp"
#include "posedepth/dtn.hpp"
#include "posedepth/image_io.hpp"
#include "posedepth/ops.hpp"

namespace posedepth {

namespace {

void check_depth(double d, const char* what) {
  if (!(d > kSceneMinDepth && d < kSceneMaxDepth)) {
    throw Error(ErrorCode::InvalidArgument, std::string(what) + " must lie inside (0.1, 10)");
  }
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct PlaneWave {
  double kx, ky, phase, amplitude;
};

/// Procedural world texture, evaluated at world (X, Y).
class Texture {
 public:
  Texture(const TextureSpec& spec, std::uint64_t scene_seed) : spec_(spec) {
    if (spec.kind != TextureKind::BandLimitedNoise) return;
    std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + scene_seed);
    constexpr int kWavesPerOctave = 4;
    for (auto& waves : channels_) {
      double power = 0.0;
      for (int o = 0; o < spec.octaves; ++o) {
        const double amplitude = std::pow(0.5, o);
        for (int k = 0; k < kWavesPerOctave; ++k) {
          const double angle = 2.0 * std::numbers::pi * uniform01(rng);
          const double freq = spec.base_frequency * std::pow(2.0, o) * (0.8 + 0.4 * uniform01(rng));
          const double omega = 2.0 * std::numbers::pi * freq;
          waves.push_back({omega * std::cos(angle), omega * std::sin(angle), 2.0 * std::numbers::pi * uniform01(rng),
                           amplitude});
          power += 0.5 * amplitude * amplitude;
        }
      }
      norms_.push_back(std::sqrt(power));
    }
  }

  double operator()(int channel, double x, double y) const {
    switch (spec_.kind) {
      case TextureKind::SmoothRamp:
        return std::clamp(spec_.ramp_offset[static_cast<std::size_t>(channel)] + spec_.gradient[0] * x +
                              spec_.gradient[1] * y,
                          0.0, 1.0);
      case TextureKind::Checker: {
        const auto cell = static_cast<long long>(std::floor(x / spec_.period)) +
                          static_cast<long long>(std::floor(y / spec_.period));
        const double base = (cell % 2 == 0) ? 0.8 : 0.2;
        return base - 0.1 * channel;
      }
      case TextureKind::BandLimitedNoise: {
        double s = 0.0;
        for (const auto& w : channels_[static_cast<std::size_t>(channel)]) s += w.amplitude * std::sin(w.kx * x + w.ky * y + w.phase);
        return 0.5 + 0.45 * std::tanh(1.5 * s / norms_[static_cast<std::size_t>(channel)]);
      }
    }
    return 0.0;
  }

 private:
  TextureSpec spec_;
  std::array<std::vector<PlaneWave>, 3> channels_;
  std::vector<double> norms_;
};

/// Ray parameter along `dir` (camera-frame z component 1, so the parameter
/// equals depth) to the plane n . X = offset, or NaN when parallel.
double hit_plane(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, const Eigen::Vector3d& n, double offset) {
  const double denom = n.dot(dir);
  if (std::abs(denom) < 1e-12) return std::numeric_limits<double>::quiet_NaN();
  return (offset - n.dot(origin)) / denom;
}

double split_slope(const SceneConfig& scene) {
  const auto& K = scene.intrinsics;
  return ((scene.layout.split_fraction * static_cast<double>(scene.height) - 0.5) - K.cy) / K.fy;
}

/// Depth along one ray, throws DegenerateGeometry when nothing is hit.
double cast(const SceneConfig& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  const auto& L = scene.layout;
  double best = std::numeric_limits<double>::infinity();
  auto consider = [&](double t, auto&& accept) {
    if (std::isfinite(t) && t > 0.0 && t < best && accept(origin + t * dir)) best = t;
  };
  auto always = [](const Eigen::Vector3d&) { return true; };
  switch (L.kind) {
    case LayoutKind::SinglePlane:
      consider(hit_plane(origin, dir, Eigen::Vector3d::UnitZ(), L.depth), always);
      break;
    case LayoutKind::SlantedPlane:
      consider(hit_plane(origin, dir, L.normal, L.offset), always);
      break;
    case LayoutKind::TwoPlanes: {
      const double s = split_slope(scene);
      consider(hit_plane(origin, dir, Eigen::Vector3d::UnitZ(), L.d1),
               [&](const Eigen::Vector3d& p) { return p.y() < s * L.d1; });
      consider(hit_plane(origin, dir, Eigen::Vector3d::UnitZ(), L.d2),
               [&](const Eigen::Vector3d& p) { return p.y() >= s * L.d2; });
      const double zlo = std::min(L.d1, L.d2), zhi = std::max(L.d1, L.d2);
      consider(hit_plane(origin, dir, Eigen::Vector3d(0.0, 1.0, -s), 0.0),
               [&](const Eigen::Vector3d& p) { return p.z() >= zlo && p.z() <= zhi; });
      break;
    }
  }
  if (!std::isfinite(best)) throw Error(ErrorCode::DegenerateGeometry, "camera ray misses the scene");
  return best;
}

}  // namespace

void SceneConfig::validate() const {
  intrinsics.validate();
  if (intrinsics.width != width || intrinsics.height != height) {
    throw Error(ErrorCode::InvalidArgument, "intrinsics extents differ from scene extents");
  }
  switch (layout.kind) {
    case LayoutKind::SinglePlane: check_depth(layout.depth, "plane depth"); break;
    case LayoutKind::TwoPlanes:
      check_depth(layout.d1, "d1");
      check_depth(layout.d2, "d2");
      if (!(layout.split_fraction > 0.0 && layout.split_fraction < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "split_fraction must lie inside (0, 1)");
      }
      break;
    case LayoutKind::SlantedPlane:
      if (!(layout.normal.norm() > 0.0)) throw Error(ErrorCode::InvalidArgument, "slanted plane normal is zero");
      break;
  }
  if (texture.kind == TextureKind::BandLimitedNoise && (texture.octaves < 1 || !(texture.base_frequency > 0.0))) {
    throw Error(ErrorCode::InvalidArgument, "noise texture needs octaves >= 1 and a positive base frequency");
  }
  if (texture.kind == TextureKind::Checker && !(texture.period > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "checker period must be positive");
  }
  if (camera_motion.empty()) throw Error(ErrorCode::InvalidArgument, "camera_motion is empty");
}

RenderedFrame render_frame(const SceneConfig& scene, const Pose& camera_pose) {
  scene.validate();
  const Texture texture(scene.texture, scene.seed);
  const auto& K = scene.intrinsics;
  const Index h = scene.height, w = scene.width;
  const Eigen::Matrix3d R = camera_pose.rotation();
  const Eigen::Vector3d origin = camera_pose.translation;
  Buffer image(3 * h * w), depth(h * w);
  for (Index v = 0; v < h; ++v) {
    for (Index u = 0; u < w; ++u) {
      const Eigen::Vector3d ray((static_cast<double>(u) - K.cx) / K.fx, (static_cast<double>(v) - K.cy) / K.fy, 1.0);
      const double t = cast(scene, origin, R * ray);
      const Eigen::Vector3d hit = origin + t * (R * ray);
      depth[v * w + u] = t;
      for (int c = 0; c < 3; ++c) image[(c * h + v) * w + u] = texture(c, hit.x(), hit.y());
    }
  }
  if (!((depth > kSceneMinDepth) && (depth < kSceneMaxDepth)).all()) {
    throw Error(ErrorCode::InvalidArgument, "rendered depth leaves (0.1, 10)");
  }
  return {Tensor({3, h, w}, std::move(image)), Tensor({h, w}, std::move(depth))};
}

std::vector<RenderedFrame> render_all(const SceneConfig& scene) {
  std::vector<RenderedFrame> frames;
  frames.reserve(scene.camera_motion.size());
  for (const Pose& p : scene.camera_motion) frames.push_back(render_frame(scene, p));
  return frames;
}

FrameTriple make_triple(const std::vector<RenderedFrame>& frames, const std::vector<Pose>& poses, Index t) {
  const auto n = static_cast<Index>(frames.size());
  if (t < 1 || t + 1 >= n || static_cast<Index>(poses.size()) != n) {
    throw Error(ErrorCode::IndexOutOfRange, "triple index " + std::to_string(t) + " needs frames t-1..t+1");
  }
  const auto i = static_cast<std::size_t>(t);
  FrameTriple out;
  out.prev = frames[i - 1].image;
  out.current = frames[i].image;
  out.next = frames[i + 1].image;
  out.gt_depth = frames[i].depth;
  out.gt_pose_prev = relative_pose(poses[i], poses[i - 1]);
  out.gt_pose_next = relative_pose(poses[i], poses[i + 1]);
  return out;
}

FrameTriple generate_triple(const SceneConfig& scene, Index t) {
  const auto n = static_cast<Index>(scene.camera_motion.size());
  if (t < 1 || t + 1 >= n) throw Error(ErrorCode::IndexOutOfRange, "triple index " + std::to_string(t));
  std::vector<RenderedFrame> frames;
  std::vector<Pose> poses;
  for (Index k = t - 1; k <= t + 1; ++k) {
    poses.push_back(scene.camera_motion[static_cast<std::size_t>(k)]);
    frames.push_back(render_frame(scene, poses.back()));
  }
  FrameTriple triple = make_triple(frames, poses, 1);
  for (const Pose* p : {&triple.gt_pose_prev, &triple.gt_pose_next}) {
    const auto view = synthesize_view(triple.current, triple.gt_depth, *p, scene.intrinsics);
    if (view.valid.data().mean() < 0.8) {
      throw Error(ErrorCode::InvalidArgument, "camera motion keeps fewer than 80% of pixels in view");
    }
  }
  return triple;
}

std::vector<Pose> lateral_motion(const std::vector<double>& steps) {
  std::vector<Pose> poses{Pose::identity()};
  for (double s : steps) {
    Pose p = poses.back();
    p.translation.x() += s;
    poses.push_back(p);
  }
  return poses;
}

SceneConfig default_scene(Index frames, std::uint64_t seed) {
  SceneConfig scene;
  scene.seed = seed;
  scene.texture.seed = seed;
  std::mt19937_64 rng(seed + 0x5EED);
  std::vector<double> steps;
  for (Index i = 1; i < frames; ++i) steps.push_back((rng() % 2 == 0 ? 1.0 : 2.0) / 8.0);
  scene.camera_motion = lateral_motion(steps);
  return scene;
}

std::string frame_file_stem(Index index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04lld", static_cast<long long>(index));
  return buf;
}

void write_scene_directory(const std::filesystem::path& dir, const SceneConfig& scene) {
  namespace fs = std::filesystem;
  scene.validate();
  std::error_code ec;
  fs::create_directories(dir / "frames", ec);
  fs::create_directories(dir / "depth", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create scene directory " + dir.string());
  write_json_file(dir / "scene.json", to_json(scene));
  Json poses = Json::array();
  for (std::size_t i = 0; i < scene.camera_motion.size(); ++i) {
    const RenderedFrame f = render_frame(scene, scene.camera_motion[i]);
    const std::string stem = frame_file_stem(static_cast<Index>(i));
    write_ppm(dir / "frames" / (stem + ".ppm"), f.image);
    write_dtn(dir / "depth" / (stem + ".dtn"), f.depth);
    poses.push_back(to_json(scene.camera_motion[i]));
  }
  write_json_file(dir / "poses.json", poses);
}

SceneDirectory read_scene_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  SceneDirectory out;
  out.config = scene_from_json(read_json_file(dir / "scene.json"));
  const Json poses = read_json_file(dir / "poses.json");
  if (!poses.is_array()) throw Error(ErrorCode::ConfigParseError, "poses.json must hold an array");
  for (const Json& p : poses) out.poses.push_back(pose_from_json(p));
  for (std::size_t i = 0; i < out.poses.size(); ++i) {
    const std::string stem = frame_file_stem(static_cast<Index>(i));
    out.images.push_back(read_ppm(dir / "frames" / (stem + ".ppm")));
    const fs::path depth = dir / "depth" / (stem + ".dtn");
    if (!fs::exists(depth)) throw Error(ErrorCode::MissingGroundTruth, "missing " + depth.string());
    out.depths.push_back(read_dtn(depth));
  }
  return out;
}

}  // namespace posedepth
