#include "posedepth/geometry.hpp"

#include <cmath>

#include "posedepth/ops.hpp"

namespace posedepth {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  if (width < 2 || height < 2) throw Error(ErrorCode::InvalidArgument, "image extents must be at least 2");
  if (!(cx >= 0.0 && cx < static_cast<double>(width)) || !(cy >= 0.0 && cy < static_cast<double>(height))) {
    throw Error(ErrorCode::InvalidArgument, "principal point outside the image");
  }
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

namespace {

Eigen::Matrix3d hat(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return m;
}

/// Rodrigues coefficients R = I + a [w]x + b [w]x^2 and their derivatives
/// with respect to theta, expressed as da = ca * theta, db = cb * theta.
struct RodriguesCoefficients {
  double a, b, ca, cb;
};

// Below this angle the closed forms lose precision to cancellation.
constexpr double kSeriesThreshold = 1e-2;

RodriguesCoefficients rodrigues_coefficients(double theta) {
  if (theta < kSeriesThreshold) {
    const double t2 = theta * theta, t4 = t2 * t2, t6 = t4 * t2;
    return {1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0, 0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0,
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0 + t6 / 45360.0, -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t6 / 453600.0};
  }
  const double s = std::sin(theta), c = std::cos(theta);
  const double t2 = theta * theta;
  return {s / theta, (1.0 - c) / t2, (theta * c - s) / (t2 * theta), (theta * s - 2.0 * (1.0 - c)) / (t2 * t2)};
}

}  // namespace

Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& w) {
  const auto k = rodrigues_coefficients(w.norm());
  const Eigen::Matrix3d W = hat(w);
  return Eigen::Matrix3d::Identity() + k.a * W + k.b * W * W;
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m) {
  Pose p;
  const Eigen::AngleAxisd aa(Eigen::Matrix3d(m.topLeftCorner<3, 3>()));
  p.axis_angle = aa.angle() * aa.axis();
  p.translation = m.topRightCorner<3, 1>();
  return p;
}

Pose Pose::from_tensor(const Tensor& params) {
  if (params.numel() != 6) throw Error(ErrorCode::ShapeMismatch, "pose tensor needs 6 values");
  Pose p;
  p.axis_angle = params.data().head<3>().matrix();
  p.translation = params.data().tail<3>().matrix();
  return p;
}

Eigen::Matrix3d Pose::rotation() const { return rotation_from_axis_angle(axis_angle); }

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose Pose::inverse() const {
  Pose p;
  p.axis_angle = -axis_angle;
  p.translation = -(rotation().transpose() * translation);
  return p;
}

Tensor Pose::to_tensor() const {
  Buffer b(6);
  b << axis_angle.x(), axis_angle.y(), axis_angle.z(), translation.x(), translation.y(), translation.z();
  return Tensor({6}, std::move(b));
}

Pose operator*(const Pose& a, const Pose& b) { return Pose::from_matrix(a.matrix() * b.matrix()); }

Pose relative_pose(const Pose& camera_from, const Pose& camera_to) {
  return Pose::from_matrix(camera_to.matrix().inverse() * camera_from.matrix());
}

double rotation_distance(const Pose& a, const Pose& b) {
  const Eigen::Matrix3d d = a.rotation().transpose() * b.rotation();
  const double c = std::clamp(0.5 * (d.trace() - 1.0), -1.0, 1.0);
  return std::acos(c);
}

Tensor pose_to_matrix(const Tensor& params) {
  if (params.numel() != 6) throw Error(ErrorCode::ShapeMismatch, "pose parameters must have 6 values");
  const Eigen::Vector3d w = params.data().head<3>().matrix();
  const Eigen::Vector3d t = params.data().tail<3>().matrix();
  const double theta = w.norm();
  const auto k = rodrigues_coefficients(theta);
  const Eigen::Matrix3d W = hat(w);
  const Eigen::Matrix3d W2 = W * W;
  const Eigen::Matrix3d R = Eigen::Matrix3d::Identity() + k.a * W + k.b * W2;

  Buffer value(16);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      double v = 0.0;
      if (r < 3 && c < 3) v = R(r, c);
      else if (r < 3) v = t(r);
      else v = c == 3 ? 1.0 : 0.0;
      value[r * 4 + c] = v;
    }
  }

  auto fn = [w, W, W2, k](const Buffer& g, std::span<Buffer* const> gin) {
    Buffer& gp = *gin[0];
    Eigen::Matrix3d G;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) G(r, c) = g[r * 4 + c];
    for (int i = 0; i < 3; ++i) {
      const Eigen::Matrix3d E = hat(Eigen::Vector3d::Unit(i));
      const Eigen::Matrix3d dR = k.ca * w(i) * W + k.a * E + k.cb * w(i) * W2 + k.b * (E * W + W * E);
      gp[i] += (G.array() * dR.array()).sum();
    }
    for (int r = 0; r < 3; ++r) gp[3 + r] += g[r * 4 + 3];
  };
  Tape* tape = params.requires_grad() ? params.tape() : nullptr;
  Shape shape{4, 4};
  if (!tape) return Tensor(shape, std::move(value));
  return tape->record(shape, std::move(value), {params}, fn);
}

Tensor pose_to_matrix(const Pose& pose) { return pose_to_matrix(pose.to_tensor()); }

PointCloud backproject(const Tensor& depth, const CameraIntrinsics& K) {
  K.validate();
  if (depth.rank() != 2 || depth.dim(0) != K.height || depth.dim(1) != K.width) {
    throw Error(ErrorCode::ShapeMismatch, "depth " + to_string(depth.shape()) + " does not match intrinsics");
  }
  if (!(depth.data() > 0.0).all()) throw Error(ErrorCode::NonPositiveDepth, "backproject needs positive depth");
  const Index h = K.height, w = K.width;
  Buffer rays(3 * h * w);
  for (Index v = 0; v < h; ++v) {
    for (Index u = 0; u < w; ++u) {
      rays[v * w + u] = (static_cast<double>(u) - K.cx) / K.fx;
      rays[h * w + v * w + u] = (static_cast<double>(v) - K.cy) / K.fy;
      rays[2 * h * w + v * w + u] = 1.0;
    }
  }
  return {mul(Tensor({3, h, w}, std::move(rays)), reshape(depth, {1, h, w}))};
}

PointCloud transform(const PointCloud& cloud, const Tensor& matrix) {
  if (matrix.rank() != 2 || matrix.dim(0) != 4 || matrix.dim(1) != 4) {
    throw Error(ErrorCode::ShapeMismatch, "transform needs a 4x4 matrix");
  }
  const Shape shape = cloud.points.shape();
  if (shape.size() != 3 || shape[0] != 3) throw Error(ErrorCode::ShapeMismatch, "point cloud must be 3xHxW");
  const Tensor top = slice(matrix, 0, 0, 3);
  const Tensor rotation = slice(top, 1, 0, 3);
  const Tensor translation = slice(top, 1, 3, 1);
  const Tensor flat = reshape(cloud.points, {3, shape[1] * shape[2]});
  return {reshape(add(matmul(rotation, flat), translation), shape)};
}

Projection project(const PointCloud& cloud, const CameraIntrinsics& K, double z_min) {
  K.validate();
  const Shape shape = cloud.points.shape();
  if (shape.size() != 3 || shape[0] != 3) throw Error(ErrorCode::ShapeMismatch, "point cloud must be 3xHxW");
  const Index h = shape[1], w = shape[2];
  const Tensor x = slice(cloud.points, 0, 0, 1);
  const Tensor y = slice(cloud.points, 0, 1, 1);
  const Tensor z = slice(cloud.points, 0, 2, 1);
  Buffer valid = (z.data() > z_min).cast<double>();
  const Tensor z_safe = maximum(z, Tensor::scalar(z_min));
  const Tensor u = x / z_safe * K.fx + K.cx;
  const Tensor v = y / z_safe * K.fy + K.cy;
  const Tensor gx = u * (2.0 / static_cast<double>(K.width - 1)) - 1.0;
  const Tensor gy = v * (2.0 / static_cast<double>(K.height - 1)) - 1.0;
  return {concat({gx, gy}, 0), Tensor({h, w}, std::move(valid))};
}

SynthesizedView synthesize_view(const Tensor& source, const Tensor& depth, const Tensor& pose_params,
                                const CameraIntrinsics& K, double z_min) {
  if (source.rank() != 3 || source.dim(1) != K.height || source.dim(2) != K.width) {
    throw Error(ErrorCode::ShapeMismatch, "source image " + to_string(source.shape()) + " does not match intrinsics");
  }
  const PointCloud target = backproject(depth, K);
  const PointCloud moved = transform(target, pose_to_matrix(pose_params));
  const Projection proj = project(moved, K, z_min);
  SampleResult sample = grid_sample_bilinear(source, proj.grid);
  return {sample.image, Tensor(proj.valid.shape(), proj.valid.data() * sample.valid.data())};
}

SynthesizedView synthesize_view(const Tensor& source, const Tensor& depth, const Pose& pose,
                                const CameraIntrinsics& K, double z_min) {
  return synthesize_view(source, depth, pose.to_tensor(), K, z_min);
}

}  // namespace posedepth
