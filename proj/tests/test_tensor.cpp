#include <cmath>
#include <random>

#include "doctest.h"
#include "posedepth/gradcheck.hpp"
#include "posedepth/ops.hpp"
#include "test_util.hpp"

using namespace posedepth;
using posedepth::test::random_tensor;

TEST_CASE("tensor construction enforces shape and size") {
  CHECK_THROWS_AS(Tensor({2, 2}, Buffer::Zero(3)), Error);
  CHECK_THROWS_AS(Tensor({0}, Buffer::Zero(0)), Error);
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6.0);
  CHECK(t.dim(-1) == 3);
  CHECK_THROWS_AS(t.dim(2), Error);
  CHECK(Tensor::scalar(4.0).shape() == Shape{1});
}

TEST_CASE("elementwise examples") {
  const Tensor a({2}, {1, 2}), b({2}, {3, 4});
  test::check_values(add(a, b), {4, 6});
  test::check_values(abs(Tensor({3}, {-2, 0, 2})), {2, 0, 2});
  test::check_values(exp(Tensor({1}, {0})), {1});
  test::check_values(elementwise(ElementwiseKind::Sub, a, b), {-2, -2});
  test::check_values(elementwise(ElementwiseKind::Clamp, Tensor({3}, {-1, 0.5, 2}), std::nullopt, {1.0, 0.0, 1.0}),
                     {0, 0.5, 1});
  test::check_values(elementwise(ElementwiseKind::PowScalar, Tensor({2}, {2, 3}), std::nullopt, {2.0}), {4, 9});
}

TEST_CASE("broadcasting follows the trailing-dimension rule") {
  CHECK(broadcast_shape({2, 3, 4}, {4}) == Shape{2, 3, 4});
  CHECK(broadcast_shape({2, 1, 4}, {3, 1}) == Shape{2, 3, 4});
  CHECK_THROWS_AS(broadcast_shape({2, 3}, {2}), Error);
  const Tensor m({2, 2}, {1, 2, 3, 4});
  test::check_values(m + Tensor({2}, {10, 20}), {11, 22, 13, 24});
  test::check_values(m * Tensor({2, 1}, {2, 3}), {2, 4, 9, 12});
}

TEST_CASE("domain errors instead of non-finite values") {
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(code_of([] { div(Tensor({2}, {1, 1}), Tensor({2}, {1, 0})); }) == ErrorCode::DomainError);
  CHECK(code_of([] { log(Tensor({2}, {1, 0})); }) == ErrorCode::DomainError);
  CHECK(code_of([] { log(Tensor({1}, {-1})); }) == ErrorCode::DomainError);
  CHECK(code_of([] { add(Tensor({2}, {1, 1}), Tensor({3}, {1, 1, 1})); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("matmul examples and loop oracle") {
  const Tensor m({2, 2}, {1, 2, 3, 4});
  test::check_values(matmul(Tensor({2, 2}, {1, 0, 0, 1}), m), {1, 2, 3, 4});
  test::check_values(matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4})), {11});
  CHECK_THROWS_AS(matmul(m, Tensor({3, 1}, {1, 2, 3})), Error);

  std::mt19937_64 rng(7);
  const Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 2});
  const Tensor c = matmul(a, b);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 2; ++j) {
      double s = 0.0;
      for (Index k = 0; k < 4; ++k) s += a.at({i, k}) * b.at({k, j});
      CHECK(std::abs(c.at({i, j}) - s) <= 1e-12);
    }
  }
}

TEST_CASE("conv2d examples and direct-sum oracle") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(rng, {1, 4, 5});
  const Tensor y = conv2d(x, Tensor({1, 1, 1, 1}, {1.0}), std::nullopt, 1, 0);
  test::check_close(y, x, 0.0);

  const Tensor constant = Tensor::full({1, 5, 6}, 0.7);
  const Tensor interior = conv2d(constant, Tensor::full({1, 1, 3, 3}, 1.0), std::nullopt, 1, 0);
  CHECK(interior.shape() == Shape{1, 3, 4});
  for (Index i = 0; i < interior.numel(); ++i) CHECK(interior[i] == doctest::Approx(9 * 0.7).epsilon(1e-14));

  const Tensor in = random_tensor(rng, {2, 5, 5});
  const Tensor w = random_tensor(rng, {3, 2, 3, 3});
  const Tensor bias = random_tensor(rng, {3});
  for (Index stride : {1, 2}) {
    const Tensor out = conv2d(in, w, bias, stride, 1);
    const Index ho = (5 + 2 - 3) / stride + 1;
    REQUIRE(out.shape() == Shape{3, ho, ho});
    for (Index o = 0; o < 3; ++o) {
      for (Index y0 = 0; y0 < ho; ++y0) {
        for (Index x0 = 0; x0 < ho; ++x0) {
          double s = bias[o];
          for (Index c = 0; c < 2; ++c)
            for (Index ky = 0; ky < 3; ++ky)
              for (Index kx = 0; kx < 3; ++kx) {
                const Index iy = y0 * stride + ky - 1, ix = x0 * stride + kx - 1;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                s += w.at({o, c, ky, kx}) * in.at({c, iy, ix});
              }
          CHECK(std::abs(out.at({o, y0, x0}) - s) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("conv2d rejects non-integral output sizes and even kernels") {
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  const Tensor x = Tensor::zeros({1, 4, 4});
  CHECK(code_of([&] { conv2d(x, Tensor::zeros({1, 1, 3, 3}), std::nullopt, 2, 1); }) ==
        ErrorCode::NonIntegralOutputSize);
  CHECK(code_of([&] { conv2d(x, Tensor::zeros({1, 1, 2, 2}), std::nullopt, 1, 0); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { conv2d(x, Tensor::zeros({1, 2, 3, 3}), std::nullopt, 1, 1); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("softmax examples, normalization and extended-precision oracle") {
  test::check_values(softmax(Tensor({3}, {0, 0, 0}), 0), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
  test::check_values(softmax(Tensor({2}, {1000, 1000}), 0), {0.5, 0.5}, 0.0);
  CHECK_THROWS_AS(softmax(Tensor({2}, {1, 2}), 1), Error);

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor(rng, {4, 7}, -1e3, 1e3);
    const Tensor s = softmax(x, 1);
    for (Index r = 0; r < 4; ++r) {
      long double mx = -1e300L, z = 0.0L;
      double total = 0.0;
      for (Index c = 0; c < 7; ++c) mx = std::max<long double>(mx, x.at({r, c}));
      for (Index c = 0; c < 7; ++c) z += std::exp(static_cast<long double>(x.at({r, c})) - mx);
      for (Index c = 0; c < 7; ++c) {
        const long double ref = std::exp(static_cast<long double>(x.at({r, c})) - mx) / z;
        CHECK(std::abs(static_cast<long double>(s.at({r, c})) - ref) <= 1e-15L);
        CHECK(s.at({r, c}) >= 0.0);
        total += s.at({r, c});
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax is invariant to a constant shift") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor(rng, {3, 5}, -4.0, 4.0);
  test::check_close(softmax(x, 0), softmax(x + 123.0, 0), 1e-12);
}

TEST_CASE("grid_sample identity, ramp shift and coordinate gradient") {
  std::mt19937_64 rng(2);
  const Tensor img = random_tensor(rng, {2, 5, 7}, 0.0, 1.0);
  const SampleResult id = grid_sample_bilinear(img, identity_grid(5, 7));
  test::check_close(id.image, img, 0.0);
  CHECK(id.valid.data().minCoeff() == 1.0);

  const Index W = 8, H = 3;
  Buffer ramp(H * W);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) ramp[y * W + x] = static_cast<double>(x);
  const Tensor ramp_img({1, H, W}, ramp);
  Buffer g = identity_grid(H, W).data();
  for (Index i = 0; i < H * W; ++i) g[i] += 2.0 / static_cast<double>(W - 1);
  const SampleResult shifted = grid_sample_bilinear(ramp_img, Tensor({2, H, W}, g));
  for (Index y = 0; y < H; ++y) {
    for (Index x = 0; x + 1 < W; ++x) {
      CHECK(shifted.image.at({0, y, x}) == doctest::Approx(x + 1.0).epsilon(1e-12));
      CHECK(shifted.valid.at({y, x}) == 1.0);
    }
    CHECK(shifted.valid.at({y, W - 1}) == 0.0);
  }

  Tape tape;
  const Tensor grid = tape.leaf(Tensor({2, 1, 1}, {0.123, 0.31}));
  const Tensor out = grid_sample_bilinear(ramp_img, grid).image;
  const Gradients grads = tape.backward(sum(out));
  CHECK(grads.of(grid)[0] == doctest::Approx(0.5 * (W - 1)).epsilon(1e-12));
  CHECK(std::abs(grads.of(grid)[1]) <= 1e-12);
}

TEST_CASE("reductions and min routing") {
  test::check_values(mean(Tensor({2}, {2, 4})), {3});
  test::check_values(min_over_axis(Tensor({2, 2}, {3, 1, 2, 5}), 1), {1, 2});
  CHECK(sum(Tensor({2, 2}, {1, 2, 3, 4}), {0, 1}).shape() == Shape{1});
  CHECK_THROWS_AS(sum(Tensor({2, 2}, {1, 2, 3, 4}), {2}), Error);
  CHECK_THROWS_AS(sum(Tensor({2, 2}, {1, 2, 3, 4}), {0, 0}), Error);

  Tape tape;
  const Tensor x = tape.leaf(Tensor({2, 3}, {3, 1, 1, 0, 2, 7}));
  const Gradients g = tape.backward(sum(min_over_axis(x, 1)));
  // Row 0 ties between indices 1 and 2: the lower index wins.
  test::check_values(g.of(x), {0, 1, 0, 1, 0, 0}, 0.0);
}

TEST_CASE("backward examples and tape contract") {
  {
    Tape tape;
    const Tensor x = tape.leaf(Tensor({3}, {1, 2, 3}));
    test::check_values(tape.backward(sum(x)).of(x), {1, 1, 1}, 0.0);
  }
  {
    Tape tape;
    const Tensor x = tape.leaf(Tensor({2}, {1, 2}));
    test::check_values(tape.backward(sum(x * x)).of(x), {2, 4}, 0.0);
  }
  Tape tape;
  const Tensor x = tape.leaf(Tensor({2}, {1, 2}));
  const Tensor unused = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  const Tensor y = x * 3.0;
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(code_of([&] { tape.backward(y); }) == ErrorCode::NonScalarLoss);
  const Gradients g = tape.backward(sum(y));
  CHECK(g.of(unused).shape() == unused.shape());
  CHECK(g.of(unused).data().isZero());
  CHECK(code_of([&] { tape.backward(sum(y)); }) == ErrorCode::TapeConsumed);

  Tape other;
  const Tensor z = other.leaf(Tensor({2}, {1, 1}));
  CHECK(code_of([&] { add(x, z); }) == ErrorCode::TapeMismatch);
}

TEST_CASE("backward is bit-deterministic") {
  auto run = [] {
    std::mt19937_64 rng(9);
    Tape tape;
    const Tensor a = tape.leaf(random_tensor(rng, {3, 4}));
    const Tensor b = tape.leaf(random_tensor(rng, {4, 5}));
    const Tensor ab = matmul(a, b);
    const Tensor loss = mean(softmax(ab, 1) * exp(ab * 0.3));
    return tape.backward(loss).of(a).data();
  };
  const Buffer g1 = run(), g2 = run();
  CHECK((g1 == g2).all());
}

TEST_CASE("activations, concat and upsampling") {
  test::check_values(sigmoid(Tensor({1}, {0})), {0.5});
  test::check_values(relu(Tensor({3}, {-1, 0, 2})), {0, 0, 2});
  test::check_values(elu(Tensor({2}, {-1, 1})), {std::exp(-1.0) - 1.0, 1});
  test::check_values(activation(ActivationKind::Sigmoid, Tensor({1}, {0})), {0.5});
  test::check_values(concat({Tensor({1}, {1}), Tensor({2}, {2, 3})}, 0), {1, 2, 3});
  CHECK_THROWS_AS(concat({Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {2, 3})}, 0), Error);

  const Tensor up = upsample_bilinear(Tensor::full({2, 3, 4}, 0.25), 2);
  CHECK(up.shape() == Shape{2, 6, 8});
  for (Index i = 0; i < up.numel(); ++i) CHECK(up[i] == 0.25);

  // Same corner-aligned convention as grid_sample.
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor(rng, {1, 3, 4});
  const Tensor via_grid = grid_sample_bilinear(x, identity_grid(6, 8)).image;
  test::check_close(upsample_bilinear(x, 2), via_grid, 1e-12);

  Tape tape;
  const Tensor a = tape.leaf(Tensor({1}, {1}));
  const Tensor b = tape.leaf(Tensor({2}, {2, 3}));
  const Gradients g = tape.backward(sum(concat({a, b}, 0) * Tensor({3}, {5, 6, 7})));
  test::check_values(g.of(a), {5}, 0.0);
  test::check_values(g.of(b), {6, 7}, 0.0);
}

TEST_CASE("box filter is the windowed mean with reflect padding") {
  // Identical rows, so only the horizontal pass changes anything.
  const Tensor x({1, 3, 4}, {1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4});
  // Reflect padding mirrors about the edge pixel: [2, 1, 2, 3, 4, 3].
  const double r0 = 5.0 / 3, r3 = 10.0 / 3;
  test::check_values(box_filter(x, 3), {r0, 2, 3, r3, r0, 2, 3, r3, r0, 2, 3, r3}, 1e-15);
  const Tensor c = Tensor::full({2, 3, 5}, 0.4);
  test::check_close(box_filter(c, 3), c, 1e-15);
}

TEST_CASE("finite-difference checks for every registered op over 10 seeds") {
  GradcheckOptions opt;
  for (const GradcheckResult& r : run_gradcheck(opt)) {
    INFO(r.name << " worst ratio " << r.worst_ratio);
    CHECK(r.passed);
    CHECK(r.seeds == 10);
  }
}
