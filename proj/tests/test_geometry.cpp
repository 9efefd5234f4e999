#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "posedepth/geometry.hpp"
#include "posedepth/ops.hpp"
#include "test_util.hpp"

using namespace posedepth;
using posedepth::test::random_tensor;
using posedepth::test::uniform;

namespace {

Pose random_pose(std::mt19937_64& rng, double rot = 1.0, double trans = 1.0) {
  Pose p;
  for (int i = 0; i < 3; ++i) {
    p.axis_angle(i) = uniform(rng, -rot, rot);
    p.translation(i) = uniform(rng, -trans, trans);
  }
  return p;
}

Eigen::Matrix4d as_matrix(const Tensor& t) {
  Eigen::Matrix4d m;
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 4; ++c) m(r, c) = t.at({r, c});
  return m;
}

Tensor ramp_image(Index h, Index w, double slope, double offset) {
  Buffer b(3 * h * w);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) b[(c * h + y) * w + x] = offset + slope * static_cast<double>(x) + 0.01 * c;
  return Tensor({3, h, w}, b);
}

}  // namespace

TEST_CASE("intrinsics validation") {
  CHECK_NOTHROW(CameraIntrinsics{10, 10, 4.5, 3.5, 10, 8}.validate());
  CHECK_THROWS_AS((CameraIntrinsics{0, 10, 4.5, 3.5, 10, 8}.validate()), Error);
  CHECK_THROWS_AS((CameraIntrinsics{10, 10, 10.0, 3.5, 10, 8}.validate()), Error);
  CHECK_THROWS_AS((CameraIntrinsics{10, 10, 4.5, -1.0, 10, 8}.validate()), Error);
}

TEST_CASE("pose_to_matrix examples") {
  CHECK(as_matrix(pose_to_matrix(Pose::identity())).isApprox(Eigen::Matrix4d::Identity(), 0.0));
  Pose quarter;
  quarter.axis_angle = {0, 0, std::numbers::pi / 2};
  const Eigen::Vector4d moved = as_matrix(pose_to_matrix(quarter)) * Eigen::Vector4d(1, 0, 0, 1);
  CHECK((moved - Eigen::Vector4d(0, 1, 0, 1)).norm() <= 1e-12);
}

TEST_CASE("rotations are orthonormal and agree with Eigen's angle-axis") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Pose p = random_pose(rng, 1.8);
    const Eigen::Matrix3d R = p.rotation();
    CHECK((R.transpose() * R - Eigen::Matrix3d::Identity()).norm() <= 1e-10);
    CHECK(std::abs(R.determinant() - 1.0) <= 1e-10);
    const double theta = p.axis_angle.norm();
    const Eigen::Matrix3d ref = Eigen::AngleAxisd(theta, p.axis_angle / theta).toRotationMatrix();
    CHECK((R - ref).norm() <= 1e-12);
  }
  // Series branch stays consistent with the closed form near its threshold.
  for (double theta : {1e-9, 1e-6, 1e-4, 9e-3, 1.1e-2}) {
    const Eigen::Vector3d w = Eigen::Vector3d(0.3, -0.5, 0.81).normalized() * theta;
    const Eigen::Matrix3d ref = Eigen::AngleAxisd(theta, w.normalized()).toRotationMatrix();
    CHECK((rotation_from_axis_angle(w) - ref).norm() <= 1e-15);
  }
}

TEST_CASE("pose composed with its inverse is the identity") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const Pose p = random_pose(rng, 2.5, 3.0);
    const Eigen::Matrix4d prod = as_matrix(pose_to_matrix(p)) * as_matrix(pose_to_matrix(p.inverse()));
    CHECK((prod - Eigen::Matrix4d::Identity()).norm() <= 1e-10);
    CHECK(((p * p.inverse()).matrix() - Eigen::Matrix4d::Identity()).norm() <= 1e-10);
  }
}

TEST_CASE("relative pose maps camera coordinates between frames") {
  std::mt19937_64 rng(3);
  const Pose a = random_pose(rng), b = random_pose(rng);
  const Pose ab = relative_pose(a, b);
  const Eigen::Vector4d x(0.3, -0.2, 2.0, 1.0);
  const Eigen::Vector4d world = a.matrix() * x;
  CHECK((ab.matrix() * x - b.matrix().inverse() * world).norm() <= 1e-12);
  CHECK(rotation_distance(a, a) <= 1e-7);
  Pose turned = a;
  turned.axis_angle = Eigen::Vector3d::Zero();
  Pose z;
  z.axis_angle = {0, 0, 0.3};
  CHECK(rotation_distance(turned, z) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("backproject examples and errors") {
  const CameraIntrinsics K{2.0, 2.0, 1.0, 1.0, 3, 3};
  const PointCloud c = backproject(Tensor::full({3, 3}, 5.0), K);
  CHECK(c.points.at({0, 1, 1}) == 0.0);
  CHECK(c.points.at({1, 1, 1}) == 0.0);
  CHECK(c.points.at({2, 1, 1}) == 5.0);

  const CameraIntrinsics unit{1.0, 1.0, 0.0, 0.0, 4, 5};
  Buffer d = Buffer::Ones(20);
  d[3 * 4 + 2] = 2.0;  // pixel (u=2, v=3)
  const PointCloud p = backproject(Tensor({5, 4}, d), unit);
  CHECK(p.points.at({0, 3, 2}) == 4.0);
  CHECK(p.points.at({1, 3, 2}) == 6.0);
  CHECK(p.points.at({2, 3, 2}) == 2.0);

  Buffer bad = Buffer::Ones(20);
  bad[7] = 0.0;
  try {
    backproject(Tensor({5, 4}, bad), unit);
    FAIL("expected NonPositiveDepth");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonPositiveDepth);
  }
}

TEST_CASE("project examples, degenerate depth and round trip") {
  const CameraIntrinsics K{10.0, 10.0, 3.0, 2.0, 7, 5};
  const Tensor principal({3, 1, 1}, {0.0, 0.0, 4.0});
  const Projection pr = project({principal}, K);
  CHECK(pr.grid.at({0, 0, 0}) == doctest::Approx(2.0 * 3.0 / 6.0 - 1.0));
  CHECK(pr.grid.at({1, 0, 0}) == doctest::Approx(0.0));
  CHECK(pr.valid[0] == 1.0);

  const Projection near = project({Tensor({3, 1, 1}, {0.5, 0.5, 1e-9})}, K);
  CHECK(near.valid[0] == 0.0);
  CHECK(near.grid.data().isFinite().all());

  std::mt19937_64 rng(4);
  for (int i = 0; i < 10; ++i) {
    const Tensor depth = random_tensor(rng, {5, 7}, 0.5, 8.0);
    const Projection back = project(backproject(depth, K), K);
    test::check_close(back.grid, identity_grid(5, 7), 1e-10);
    // The z coordinate is the generating depth exactly.
    const PointCloud c = backproject(depth, K);
    CHECK((slice(c.points, 0, 2, 1).data() == depth.data()).all());
  }
}

TEST_CASE("identity warp reproduces the source for any depth") {
  std::mt19937_64 rng(5);
  const CameraIntrinsics K{6.0, 6.0, 3.5, 2.5, 8, 6};
  const Tensor src = random_tensor(rng, {3, 6, 8}, 0.0, 1.0);
  const SynthesizedView v = synthesize_view(src, random_tensor(rng, {6, 8}, 0.5, 5.0), Pose::identity(), K);
  test::check_close(v.image, src, 0.0);
  CHECK(v.valid.data().minCoeff() == 1.0);
}

TEST_CASE("fronto-parallel shift equals fx * tx / d") {
  const Index H = 6, W = 24;
  const CameraIntrinsics K{20.0, 20.0, 11.5, 2.5, W, H};
  const double slope = 0.03;
  const Tensor src = ramp_image(H, W, slope, 0.1);
  for (const double d : {2.0, 3.7}) {
    for (const double tx : {0.05, -0.11, 0.213}) {
      Pose T;
      T.translation = {tx, 0.0, 0.0};
      const SynthesizedView v = synthesize_view(src, Tensor::full({H, W}, d), T, K);
      // On a ramp the bilinear warp is exact, so every valid pixel moves by
      // the same amount.
      double max_dev = 0.0;
      Index count = 0;
      for (Index y = 0; y < H; ++y) {
        for (Index x = 0; x < W; ++x) {
          if (v.valid.at({y, x}) == 0.0) continue;
          const double shift = (v.image.at({0, y, x}) - src.at({0, y, x})) / slope;
          max_dev = std::max(max_dev, std::abs(std::abs(shift) - K.fx * std::abs(tx) / d));
          ++count;
        }
      }
      CHECK(count > 0);
      CHECK(max_dev <= 1e-6);
    }
  }
}

TEST_CASE("valid mask is the conjunction of in-view and positive depth") {
  const CameraIntrinsics K{4.0, 4.0, 3.5, 1.5, 8, 4};
  Pose T;
  T.translation = {0.0, 0.0, -3.0};  // every point ends up behind the source camera
  const SynthesizedView v = synthesize_view(Tensor::full({1, 4, 8}, 0.5), Tensor::full({4, 8}, 2.0), T, K);
  CHECK(v.valid.data().maxCoeff() == 0.0);
  CHECK(v.image.data().isFinite().all());
}
