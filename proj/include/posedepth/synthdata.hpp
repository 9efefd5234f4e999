#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "posedepth/geometry.hpp"
#include "posedepth/tensor.hpp"

namespace posedepth {

enum class LayoutKind { SinglePlane, TwoPlanes, SlantedPlane };

/// World geometry. All planes are expressed in world coordinates.
///
/// TwoPlanes is a step: rows above `split_fraction` of the image (seen from
/// a camera on the world X axis) lie on Z = d1, the rest on Z = d2. The two
/// half-planes are joined by a strip in the plane Y = s Z through the
/// origin, which such cameras see edge-on.
struct SceneLayout {
  LayoutKind kind = LayoutKind::TwoPlanes;
  double depth = 3.0;             ///< SinglePlane
  double d1 = 6.0;                ///< TwoPlanes, upper part
  double d2 = 3.0;                ///< TwoPlanes, lower part
  double split_fraction = 0.375;  ///< TwoPlanes, fraction of rows on d1
  Eigen::Vector3d normal{0.0, -0.3, 1.0};  ///< SlantedPlane: normal . X = offset
  double offset = 4.0;
};

enum class TextureKind { SmoothRamp, BandLimitedNoise, Checker };

/// Color as a function of world (X, Y) on the surface.
struct TextureSpec {
  TextureKind kind = TextureKind::BandLimitedNoise;
  // SmoothRamp: channel c = offset[c] + gradient . (X, Y), clamped to [0, 1].
  std::array<double, 2> gradient{0.05, 0.0};
  std::array<double, 3> ramp_offset{0.5, 0.4, 0.6};
  // BandLimitedNoise: octaves of random plane waves, doubling frequency.
  int octaves = 3;
  double base_frequency = 0.4;  ///< cycles per world unit of the first octave
  std::uint64_t seed = 0;
  // Checker: square side in world units.
  double period = 0.5;
};

struct SceneConfig {
  Index width = 96;
  Index height = 32;
  CameraIntrinsics intrinsics{48.0, 48.0, 47.5, 15.5, 96, 32};
  SceneLayout layout;
  TextureSpec texture;
  std::vector<Pose> camera_motion;  ///< camera-to-world pose per frame
  std::uint64_t seed = 0;

  void validate() const;
};

/// Depth bounds every layout must respect.
inline constexpr double kSceneMinDepth = 0.1;
inline constexpr double kSceneMaxDepth = 10.0;

struct RenderedFrame {
  Tensor image;  ///< 3 x H x W in [0, 1]
  Tensor depth;  ///< H x W
};

struct FrameTriple {
  Tensor prev, current, next;  ///< I_{t-1}, I_t, I_{t+1}
  Tensor gt_depth;             ///< depth of I_t
  Pose gt_pose_prev;           ///< T_{t -> t-1}
  Pose gt_pose_next;           ///< T_{t -> t+1}
};

/// Ray casts the world from `camera_pose` (camera-to-world).
RenderedFrame render_frame(const SceneConfig& scene, const Pose& camera_pose);

/// Frames t-1, t, t+1 with ground-truth depth of frame t and relative poses.
FrameTriple generate_triple(const SceneConfig& scene, Index t);

/// Same as generate_triple with the three frames taken from pre-rendered data.
FrameTriple make_triple(const std::vector<RenderedFrame>& frames, const std::vector<Pose>& poses, Index t);

std::vector<RenderedFrame> render_all(const SceneConfig& scene);

/// Two-planes band-limited noise scene, 96 x 32, with `frames` frames of
/// forward lateral motion. Per-frame steps are 1/8 or 2/8 world units chosen
/// from `seed`, giving whole-pixel disparities on both planes.
SceneConfig default_scene(Index frames = 12, std::uint64_t seed = 0);

/// Frames of a camera translating along X by the given per-frame steps,
/// starting at the origin.
std::vector<Pose> lateral_motion(const std::vector<double>& steps);

// Scene directories: scene.json, frames/NNNN.ppm, depth/NNNN.dtn, poses.json.

void write_scene_directory(const std::filesystem::path& dir, const SceneConfig& scene);

struct SceneDirectory {
  SceneConfig config;
  std::vector<Tensor> images;  ///< 8-bit quantized frames
  std::vector<Tensor> depths;
  std::vector<Pose> poses;
};

SceneDirectory read_scene_directory(const std::filesystem::path& dir);

std::string frame_file_stem(Index index);

}  // namespace posedepth
