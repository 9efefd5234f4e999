#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "posedepth/tensor.hpp"

namespace posedepth {

/// Pinhole camera. Pixel (u, v) has its center at integer coordinates.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Index width = 2;
  Index height = 2;

  void validate() const;
  Eigen::Matrix3d matrix() const;
};

/// Rigid transform as axis-angle rotation followed by translation: x' = R x + t.
struct Pose {
  Eigen::Vector3d axis_angle = Eigen::Vector3d::Zero();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }
  static Pose from_matrix(const Eigen::Matrix4d& m);
  /// Reads [rx, ry, rz, tx, ty, tz].
  static Pose from_tensor(const Tensor& params);

  Eigen::Matrix3d rotation() const;
  Eigen::Matrix4d matrix() const;
  Pose inverse() const;
  /// [rx, ry, rz, tx, ty, tz] as a constant tensor.
  Tensor to_tensor() const;
};

/// this-after-other: (a * b).matrix() == a.matrix() * b.matrix().
Pose operator*(const Pose& a, const Pose& b);

/// Relative transform mapping frame-`from` camera coordinates into
/// frame-`to` camera coordinates, given camera-to-world poses.
Pose relative_pose(const Pose& camera_from, const Pose& camera_to);

/// Angle of R_a^T R_b in radians.
double rotation_distance(const Pose& a, const Pose& b);

/// Rodrigues map. Uses a series expansion for small angles.
Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& w);

/// Differentiable 4x4 homogeneous matrix from [rx, ry, rz, tx, ty, tz].
Tensor pose_to_matrix(const Tensor& params);
Tensor pose_to_matrix(const Pose& pose);

struct PointCloud {
  Tensor points;  ///< 3 x H x W camera-frame coordinates
};

/// point(u, v) = depth(v, u) * ((u - cx) / fx, (v - cy) / fy, 1).
PointCloud backproject(const Tensor& depth, const CameraIntrinsics& K);

/// Applies a 4x4 rigid transform tensor to every point.
PointCloud transform(const PointCloud& cloud, const Tensor& matrix);

struct Projection {
  Tensor grid;   ///< 2 x H x W normalized coordinates (grid_sample convention)
  Tensor valid;  ///< H x W, 1 where z > z_min
};

inline constexpr double kDefaultMinDepth = 1e-3;

/// Pinhole projection into normalized sampling coordinates. Points at or
/// behind z_min are flagged and their depth clamped to z_min.
Projection project(const PointCloud& cloud, const CameraIntrinsics& K, double z_min = kDefaultMinDepth);

struct SynthesizedView {
  Tensor image;  ///< C x H x W
  Tensor valid;  ///< H x W, in view and in front of the camera
};

/// Reconstructs the target view by sampling `source` at the reprojection of
/// the target depth under `pose` (target camera -> source camera).
SynthesizedView synthesize_view(const Tensor& source, const Tensor& depth, const Tensor& pose_params,
                                const CameraIntrinsics& K, double z_min = kDefaultMinDepth);
SynthesizedView synthesize_view(const Tensor& source, const Tensor& depth, const Pose& pose,
                                const CameraIntrinsics& K, double z_min = kDefaultMinDepth);

}  // namespace posedepth
