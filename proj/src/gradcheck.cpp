#include "posedepth/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "posedepth/geometry.hpp"
#include "posedepth/losses.hpp"
#include "posedepth/networks.hpp"
#include "posedepth/ops.hpp"
#include "posedepth/synthdata.hpp"
#include "posedepth/training.hpp"

namespace posedepth {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

namespace {

using Rng = std::mt19937_64;
using Inputs = std::vector<Tensor>;

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Buffer b(numel(shape));
  for (Index i = 0; i < b.size(); ++i) b[i] = uniform(rng, lo, hi);
  return Tensor(std::move(shape), std::move(b));
}

/// Values with magnitude in [lo, hi] and random sign, away from kinks at 0.
Tensor signed_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Buffer b(numel(shape));
  for (Index i = 0; i < b.size(); ++i) b[i] = (rng() & 1 ? 1.0 : -1.0) * uniform(rng, lo, hi);
  return Tensor(std::move(shape), std::move(b));
}

Tensor binary_mask(Rng& rng, Shape shape, double p_one) {
  Buffer b(numel(shape));
  for (Index i = 0; i < b.size(); ++i) b[i] = uniform(rng, 0.0, 1.0) < p_one ? 1.0 : 0.0;
  return Tensor(std::move(shape), std::move(b));
}

/// Smooth positive field in [lo, hi] built from a few random cosines.
Tensor smooth_field(Rng& rng, Shape shape, double lo, double hi) {
  const Index c = shape.size() == 3 ? shape[0] : 1;
  const Index h = shape[shape.size() - 2], w = shape.back();
  Buffer b(numel(shape));
  for (Index ch = 0; ch < c; ++ch) {
    const double fx = uniform(rng, 0.1, 0.5), fy = uniform(rng, 0.1, 0.5), ph = uniform(rng, 0.0, 6.28);
    const double gx = uniform(rng, 0.05, 0.3), gy = uniform(rng, 0.05, 0.3), pg = uniform(rng, 0.0, 6.28);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const double s = 0.5 * std::cos(fx * x + fy * y + ph) + 0.5 * std::sin(gx * x - gy * y + pg);
        b[(ch * h + y) * w + x] = lo + (hi - lo) * (0.5 + 0.5 * s);
      }
    }
  }
  return Tensor(std::move(shape), std::move(b));
}

/// Sampling grid over a w x h source whose points avoid pixel-lattice lines.
Tensor off_lattice_grid(Rng& rng, Index out_h, Index out_w, Index h, Index w) {
  Buffer b(2 * out_h * out_w);
  const Index n = out_h * out_w;
  for (Index i = 0; i < n; ++i) {
    const double u = static_cast<double>(rng() % static_cast<std::uint64_t>(w - 1)) + uniform(rng, 0.1, 0.9);
    const double v = static_cast<double>(rng() % static_cast<std::uint64_t>(h - 1)) + uniform(rng, 0.1, 0.9);
    b[i] = 2.0 * u / static_cast<double>(w - 1) - 1.0;
    b[n + i] = 2.0 * v / static_cast<double>(h - 1) - 1.0;
  }
  return Tensor({2, out_h, out_w}, std::move(b));
}

Tensor small_pose(Rng& rng, double rot, double trans) {
  Buffer b(6);
  for (Index i = 0; i < 3; ++i) b[i] = uniform(rng, -rot, rot);
  for (Index i = 3; i < 6; ++i) b[i] = uniform(rng, -trans, trans);
  return Tensor({6}, std::move(b));
}

CameraIntrinsics small_camera(Index w, Index h) {
  return {static_cast<double>(w) * 0.8, static_cast<double>(w) * 0.8, 0.5 * static_cast<double>(w - 1),
          0.5 * static_cast<double>(h - 1), w, h};
}

// Tiny networks so end-to-end differences stay cheap.
NetworkConfig tiny_network(std::uint64_t seed) {
  NetworkConfig n;
  n.encoder_channels = {4, 6};
  n.decoder_channels = {4};
  n.query_count = 4;
  n.feature_channels = 4;
  n.pose_encoder_channels = {4, 8};
  n.pose_scale = 0.05;
  n.seed = seed;
  return n;
}

constexpr Index kTinyW = 16, kTinyH = 8;

Inputs parameter_tensors(const ParameterSet& ps, Rng& rng) {
  Inputs out;
  for (const Parameter& p : ps.items()) {
    Buffer v = p.value;
    // Zero-initialized biases would hide their own gradient paths.
    for (Index i = 0; i < v.size(); ++i) v[i] += uniform(rng, -0.05, 0.05);
    out.emplace_back(p.shape, std::move(v));
  }
  return out;
}

Weights bind_named(const ParameterSet& ps, const Inputs& values, std::size_t offset = 0) {
  Weights w;
  for (std::size_t i = 0; i < ps.items().size(); ++i) w.insert(ps.items()[i].name, values[offset + i]);
  return w;
}

struct TinyScene {
  Inputs frames;  ///< prev, current, next
  double step = 0.0;
};

/// Three rendered frames of a small two-planes scene under lateral motion.
TinyScene tiny_scene(Rng& rng) {
  SceneConfig scene;
  scene.width = kTinyW;
  scene.height = kTinyH;
  scene.intrinsics = small_camera(kTinyW, kTinyH);
  scene.texture.seed = rng();
  scene.texture.base_frequency = 0.6;
  const double step = uniform(rng, 0.1, 0.3);
  scene.camera_motion = lateral_motion({step, step});
  TinyScene out;
  out.step = step;
  for (const Pose& p : scene.camera_motion) out.frames.push_back(render_frame(scene, p).image);
  return out;
}

GradcheckCase unary(const std::string& name, std::function<Tensor(Rng&)> gen, std::function<Tensor(const Tensor&)> fn) {
  return {name, [gen](Rng& r) { return GradcheckInputs{{gen(r)}, {}}; },
          [fn](const Inputs& x, const Inputs&) { return fn(x[0]); }};
}

GradcheckCase binary(const std::string& name, std::function<Inputs(Rng&)> gen,
                     std::function<Tensor(const Tensor&, const Tensor&)> fn) {
  return {name, [gen](Rng& r) { return GradcheckInputs{gen(r), {}}; },
          [fn](const Inputs& x, const Inputs&) { return fn(x[0], x[1]); }};
}

std::vector<GradcheckCase> build_registry() {
  std::vector<GradcheckCase> reg;

  // Elementwise.
  reg.push_back(binary("add", [](Rng& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {4})}; },
                       [](const Tensor& a, const Tensor& b) { return add(a, b); }));
  reg.push_back(binary("sub", [](Rng& r) { return Inputs{random_tensor(r, {2, 3, 4}), random_tensor(r, {3, 1})}; },
                       [](const Tensor& a, const Tensor& b) { return sub(a, b); }));
  reg.push_back(binary("mul", [](Rng& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {3, 4})}; },
                       [](const Tensor& a, const Tensor& b) { return mul(a, b); }));
  reg.push_back(binary("div", [](Rng& r) { return Inputs{random_tensor(r, {3, 4}), signed_tensor(r, {4}, 0.5, 2.0)}; },
                       [](const Tensor& a, const Tensor& b) { return div(a, b); }));
  reg.push_back(binary("minimum",
                       [](Rng& r) {
                         Tensor a = random_tensor(r, {3, 4});
                         return Inputs{a, a + signed_tensor(r, {3, 4}, 0.1, 1.0)};
                       },
                       [](const Tensor& a, const Tensor& b) { return minimum(a, b); }));
  reg.push_back(binary("maximum",
                       [](Rng& r) {
                         Tensor a = random_tensor(r, {3, 4});
                         return Inputs{a, a + signed_tensor(r, {3, 4}, 0.1, 1.0)};
                       },
                       [](const Tensor& a, const Tensor& b) { return maximum(a, b); }));
  reg.push_back(unary("neg", [](Rng& r) { return random_tensor(r, {5}); }, [](const Tensor& x) { return neg(x); }));
  reg.push_back(unary("abs", [](Rng& r) { return signed_tensor(r, {6}, 0.1, 1.0); }, [](const Tensor& x) { return abs(x); }));
  reg.push_back(unary("exp", [](Rng& r) { return random_tensor(r, {6}, -2.0, 2.0); }, [](const Tensor& x) { return exp(x); }));
  reg.push_back(unary("log", [](Rng& r) { return random_tensor(r, {6}, 0.5, 2.0); }, [](const Tensor& x) { return log(x); }));
  reg.push_back(unary("pow", [](Rng& r) { return random_tensor(r, {6}, 0.5, 2.0); }, [](const Tensor& x) { return pow(x, 2.5); }));
  reg.push_back(unary("clamp",
                      [](Rng& r) {
                        Buffer b(8);
                        for (Index i = 0; i < 8; ++i) {
                          do b[i] = uniform(r, -1.0, 1.0);
                          while (std::abs(std::abs(b[i]) - 0.5) < 0.05);
                        }
                        return Tensor({8}, b);
                      },
                      [](const Tensor& x) { return clamp(x, -0.5, 0.5); }));

  // Activations.
  reg.push_back(unary("relu", [](Rng& r) { return signed_tensor(r, {8}, 0.1, 1.0); }, [](const Tensor& x) { return relu(x); }));
  reg.push_back(unary("elu", [](Rng& r) { return signed_tensor(r, {8}, 0.1, 2.0); }, [](const Tensor& x) { return elu(x); }));
  reg.push_back(unary("sigmoid", [](Rng& r) { return random_tensor(r, {8}, -3.0, 3.0); },
                      [](const Tensor& x) { return sigmoid(x); }));

  // Linear algebra and layout.
  reg.push_back(binary("matmul", [](Rng& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {4, 2})}; },
                       [](const Tensor& a, const Tensor& b) { return matmul(a, b); }));
  reg.push_back(unary("transpose", [](Rng& r) { return random_tensor(r, {3, 5}); },
                      [](const Tensor& x) { return transpose(x); }));
  reg.push_back(unary("reshape", [](Rng& r) { return random_tensor(r, {2, 6}); },
                      [](const Tensor& x) { return reshape(x, {3, 4}); }));
  reg.push_back(unary("slice", [](Rng& r) { return random_tensor(r, {3, 5, 4}); },
                      [](const Tensor& x) { return slice(x, 1, 1, 3); }));
  reg.push_back(binary("concat", [](Rng& r) { return Inputs{random_tensor(r, {2, 3}), random_tensor(r, {2, 2})}; },
                       [](const Tensor& a, const Tensor& b) { return concat({a, b}, 1); }));

  // Reductions.
  reg.push_back(unary("sum", [](Rng& r) { return random_tensor(r, {3, 4, 2}); },
                      [](const Tensor& x) { return sum(x, {0, 2}); }));
  reg.push_back(unary("mean", [](Rng& r) { return random_tensor(r, {3, 4, 2}); },
                      [](const Tensor& x) { return mean(x, {1}); }));
  reg.push_back(unary("min_over_axis",
                      [](Rng& r) {
                        // Distinct values at least 0.1 apart along the reduced axis.
                        Buffer b(12);
                        for (Index j = 0; j < 4; ++j) {
                          std::vector<double> levels{0.0, 0.3, 0.6};
                          for (std::size_t i = levels.size() - 1; i > 0; --i) std::swap(levels[i], levels[r() % (i + 1)]);
                          for (Index i = 0; i < 3; ++i) b[i * 4 + j] = levels[static_cast<std::size_t>(i)] + uniform(r, 0.0, 0.1);
                        }
                        return Tensor({3, 4}, b);
                      },
                      [](const Tensor& x) { return min_over_axis(x, 0); }));
  reg.push_back(unary("softmax", [](Rng& r) { return random_tensor(r, {3, 4}, -2.0, 2.0); },
                      [](const Tensor& x) { return softmax(x, 1); }));

  // Image operations.
  reg.push_back({"conv2d",
                 [](Rng& r) {
                   return GradcheckInputs{{random_tensor(r, {2, 5, 6}), random_tensor(r, {3, 2, 3, 3}), random_tensor(r, {3})},
                                          {}};
                 },
                 [](const Inputs& x, const Inputs&) { return conv2d(x[0], x[1], x[2], 1, 1); }});
  reg.push_back({"conv2d_stride2",
                 [](Rng& r) {
                   return GradcheckInputs{{random_tensor(r, {2, 5, 5}), random_tensor(r, {2, 2, 3, 3})}, {}};
                 },
                 [](const Inputs& x, const Inputs&) { return conv2d(x[0], x[1], std::nullopt, 2, 1); }});
  reg.push_back({"grid_sample_bilinear",
                 [](Rng& r) {
                   return GradcheckInputs{{random_tensor(r, {2, 5, 6}, 0.0, 1.0), off_lattice_grid(r, 3, 4, 5, 6)}, {}};
                 },
                 [](const Inputs& x, const Inputs&) { return grid_sample_bilinear(x[0], x[1]).image; }});
  reg.push_back(unary("upsample_bilinear", [](Rng& r) { return random_tensor(r, {2, 3, 4}); },
                      [](const Tensor& x) { return upsample_bilinear(x, 2); }));
  reg.push_back(unary("avg_pool2d", [](Rng& r) { return random_tensor(r, {2, 4, 6}); },
                      [](const Tensor& x) { return avg_pool2d(x, 2, 3); }));
  reg.push_back(unary("box_filter", [](Rng& r) { return random_tensor(r, {2, 5, 6}); },
                      [](const Tensor& x) { return box_filter(x, 3); }));

  // Geometry.
  reg.push_back(unary("pose_to_matrix", [](Rng& r) { return small_pose(r, 0.8, 1.0); },
                      [](const Tensor& x) { return pose_to_matrix(x); }));
  reg.push_back(unary("pose_to_matrix_small_angle",
                      [](Rng& r) {
                        Tensor p = small_pose(r, 1e-9, 1.0);
                        return p;
                      },
                      [](const Tensor& x) { return pose_to_matrix(x); }));
  reg.push_back({"backproject",
                 [](Rng& r) { return GradcheckInputs{{random_tensor(r, {4, 5}, 1.0, 3.0)}, {}}; },
                 [](const Inputs& x, const Inputs&) { return backproject(x[0], small_camera(5, 4)).points; }});
  reg.push_back(binary("transform",
                       [](Rng& r) { return Inputs{random_tensor(r, {3, 2, 3}), small_pose(r, 0.5, 1.0)}; },
                       [](const Tensor& p, const Tensor& pose) { return transform({p}, pose_to_matrix(pose)).points; }));
  reg.push_back({"project",
                 [](Rng& r) {
                   Tensor p = concat({random_tensor(r, {2, 3, 4}), random_tensor(r, {1, 3, 4}, 1.0, 3.0)}, 0);
                   return GradcheckInputs{{p}, {}};
                 },
                 [](const Inputs& x, const Inputs&) { return project({x[0]}, small_camera(4, 3)).grid; }});
  reg.push_back({"synthesize_view",
                 [](Rng& r) {
                   return GradcheckInputs{{smooth_field(r, {3, 6, 8}, 0.1, 0.9), smooth_field(r, {6, 8}, 2.0, 4.0),
                                           small_pose(r, 0.02, 0.1)},
                                          {}};
                 },
                 [](const Inputs& x, const Inputs&) { return synthesize_view(x[0], x[1], x[2], small_camera(8, 6)).image; }});

  // Losses.
  reg.push_back({"ssim",
                 [](Rng& r) {
                   return GradcheckInputs{{random_tensor(r, {2, 5, 6}, 0.0, 1.0), random_tensor(r, {2, 5, 6}, 0.0, 1.0)}, {}};
                 },
                 [](const Inputs& x, const Inputs&) { return ssim(x[0], x[1], LossConfig{}); }});
  reg.push_back({"photometric_error",
                 [](Rng& r) {
                   return GradcheckInputs{{random_tensor(r, {3, 5, 6}, 0.0, 1.0), random_tensor(r, {3, 5, 6}, 0.0, 1.0)}, {}};
                 },
                 [](const Inputs& x, const Inputs&) { return photometric_error(x[0], x[1], LossConfig{}); }});
  reg.push_back({"min_reprojection_loss",
                 [](Rng& r) {
                   GradcheckInputs in;
                   for (int i = 0; i < 3; ++i) in.wrt.push_back(random_tensor(r, {3, 5, 6}, 0.0, 1.0));
                   for (int i = 0; i < 2; ++i) in.fixed.push_back(random_tensor(r, {3, 5, 6}, 0.0, 1.0));
                   for (int i = 0; i < 2; ++i) in.fixed.push_back(binary_mask(r, {5, 6}, 0.8));
                   return in;
                 },
                 [](const Inputs& x, const Inputs& f) {
                   return min_reprojection_loss(x[0], {{x[1], f[2]}, {x[2], f[3]}}, {f[0], f[1]}, LossConfig{}).loss;
                 }});
  reg.push_back({"smoothness_loss",
                 [](Rng& r) {
                   return GradcheckInputs{{random_tensor(r, {5, 6}, 1.0, 4.0), random_tensor(r, {3, 5, 6}, 0.0, 1.0)}, {}};
                 },
                 [](const Inputs& x, const Inputs&) { return smoothness_loss(x[0], x[1]); }});
  reg.push_back({"total_loss",
                 [](Rng& r) {
                   return GradcheckInputs{{random_tensor(r, {3, 4, 6}, 0.0, 1.0), random_tensor(r, {3, 4, 6}, 0.0, 1.0),
                                           random_tensor(r, {4, 6}, 1.0, 4.0)},
                                          {}};
                 },
                 [](const Inputs& x, const Inputs&) {
                   const LossConfig cfg;
                   const Tensor valid = Tensor::full({4, 6}, 1.0);
                   const ReprojectionLoss rl = min_reprojection_loss(x[0], {{x[1], valid}}, {}, cfg);
                   return total_loss(rl, smoothness_loss(x[2], x[0]), cfg).total;
                 }});

  // Self query layer.
  reg.push_back(binary("self_cost_volume", [](Rng& r) { return Inputs{random_tensor(r, {4, 3}), random_tensor(r, {3, 4, 5})}; },
                       [](const Tensor& q, const Tensor& s) { return self_cost_volume({q}, {s}).V; }));
  reg.push_back(unary("bin_centers", [](Rng& r) { return random_tensor(r, {5}, -2.0, 2.0); },
                      [](const Tensor& x) { return bin_centers(x, 0.1, 10.0); }));
  reg.push_back({"compute_depth_bins",
                 [](Rng& r) {
                   NetworkConfig cfg = tiny_network(r());
                   const ParameterSet ps = init_depth_parameters(cfg);
                   GradcheckInputs in{{random_tensor(r, {4, 4, 6}), random_tensor(r, {4, 4, 6})}, {}};
                   for (const char* name : {"bins.fc1.weight", "bins.fc1.bias", "bins.fc2.weight", "bins.fc2.bias"}) {
                     const Parameter& p = ps.get(name);
                     in.wrt.push_back(Tensor(p.shape, p.value + random_tensor(r, p.shape, -0.05, 0.05).data()));
                   }
                   return in;
                 },
                 [](const Inputs& x, const Inputs&) {
                   Weights w;
                   w.insert("bins.fc1.weight", x[2]);
                   w.insert("bins.fc1.bias", x[3]);
                   w.insert("bins.fc2.weight", x[4]);
                   w.insert("bins.fc2.bias", x[5]);
                   const DepthBins bins = compute_depth_bins({x[0]}, {x[1]}, w, tiny_network(0));
                   return concat({bins.logits, bins.centers}, 0);
                 }});
  reg.push_back(binary("probabilistic_depth",
                       [](Rng& r) { return Inputs{random_tensor(r, {4, 3, 5}, -2.0, 2.0), random_tensor(r, {4}, -1.0, 1.0)}; },
                       [](const Tensor& v, const Tensor& logits) {
                         return probabilistic_depth({v}, {logits, bin_centers(logits, 0.1, 10.0)});
                       }));

  // Networks and the end-to-end objective on a tiny rendered scene.
  const NetworkConfig net = tiny_network(0);
  const ParameterSet depth_ps = init_depth_parameters(net);
  const ParameterSet pose_ps = init_pose_parameters(net);

  reg.push_back({"depthnet_forward",
                 [](Rng& r) {
                   return GradcheckInputs{parameter_tensors(init_depth_parameters(tiny_network(r())), r),
                                          {smooth_field(r, {3, kTinyH, kTinyW}, 0.1, 0.9)}};
                 },
                 [depth_ps, net](const Inputs& x, const Inputs& f) {
                   return depthnet_forward(f[0], bind_named(depth_ps, x), net).depth;
                 }});
  reg.push_back({"posenet_forward",
                 [](Rng& r) {
                   return GradcheckInputs{parameter_tensors(init_pose_parameters(tiny_network(r())), r),
                                          {smooth_field(r, {3, kTinyH, kTinyW}, 0.1, 0.9),
                                           smooth_field(r, {3, kTinyH, kTinyW}, 0.1, 0.9)}};
                 },
                 [pose_ps, net](const Inputs& x, const Inputs& f) {
                   return posenet_forward(f[0], f[1], bind_named(pose_ps, x), net);
                 }});

  const LossConfig loss_cfg;
  const CameraIntrinsics K = small_camera(kTinyW, kTinyH);
  // fixed = frames (prev, current, next) followed by the other network's weights.
  // Instances where the auto-mask drops every pixel would leave only the
  // smoothness term, so they are redrawn.
  auto keeps_pixels = [=](const Weights& dw, const Weights& pw, const Inputs& f) {
    return forward_step(dw, pw, net, f[0], f[1], f[2], K, loss_cfg).loss.mask_coverage > 0.05;
  };
  reg.push_back({"end_to_end.depth_weights",
                 [=](Rng& r) {
                   for (;;) {
                     const NetworkConfig n = tiny_network(r());
                     const TinyScene scene = tiny_scene(r);
                     GradcheckInputs in{parameter_tensors(init_depth_parameters(n), r), scene.frames};
                     for (Tensor& t : parameter_tensors(init_pose_parameters(n), r)) in.fixed.push_back(t);
                     if (keeps_pixels(bind_named(depth_ps, in.wrt), bind_named(pose_ps, in.fixed, 3), in.fixed)) return in;
                   }
                 },
                 [=](const Inputs& x, const Inputs& f) {
                   return forward_step(bind_named(depth_ps, x), bind_named(pose_ps, f, 3), net, f[0], f[1], f[2], K, loss_cfg)
                       .loss.total;
                 }});
  reg.push_back({"end_to_end.pose_weights",
                 [=](Rng& r) {
                   for (;;) {
                     const NetworkConfig n = tiny_network(r());
                     const TinyScene scene = tiny_scene(r);
                     GradcheckInputs in{parameter_tensors(init_pose_parameters(n), r), scene.frames};
                     for (Tensor& t : parameter_tensors(init_depth_parameters(n), r)) in.fixed.push_back(t);
                     if (keeps_pixels(bind_named(depth_ps, in.fixed, 3), bind_named(pose_ps, in.wrt), in.fixed)) return in;
                   }
                 },
                 [=](const Inputs& x, const Inputs& f) {
                   return forward_step(bind_named(depth_ps, f, 3), bind_named(pose_ps, x), net, f[0], f[1], f[2], K, loss_cfg)
                       .loss.total;
                 }});
  reg.push_back({"end_to_end.pose_params",
                 [](Rng& r) {
                   const TinyScene scene = tiny_scene(r);
                   Buffer prev = small_pose(r, 0.02, 0.02).data(), next = small_pose(r, 0.02, 0.02).data();
                   prev[3] += scene.step;
                   next[3] -= scene.step;
                   GradcheckInputs in{{Tensor({6}, prev), Tensor({6}, next)}, scene.frames};
                   for (Tensor& t : parameter_tensors(init_depth_parameters(tiny_network(r())), r)) in.fixed.push_back(t);
                   return in;
                 },
                 [=](const Inputs& x, const Inputs& f) {
                   const Tensor depth = depthnet_forward(f[1], bind_named(depth_ps, f, 3), net).depth;
                   return view_synthesis_loss(f[1], f[0], f[2], depth, x[0], x[1], K, loss_cfg).loss.total;
                 }});
  return reg;
}

double projected(const Tensor& out, const Buffer& r) { return (out.data() * r).sum(); }

}  // namespace

const std::vector<GradcheckCase>& gradcheck_registry() {
  static const std::vector<GradcheckCase> reg = build_registry();
  return reg;
}

GradcheckResult run_gradcheck_case(const GradcheckCase& c, const GradcheckOptions& opt) {
  GradcheckResult res;
  res.name = c.name;
  // Seed streams are per case so that filtering the registry does not shift them.
  std::uint64_t name_hash = 1469598103934665603ull;
  for (char ch : c.name) name_hash = (name_hash ^ static_cast<unsigned char>(ch)) * 1099511628211ull;

  for (int s = 0; s < opt.seeds; ++s) {
    Rng rng(opt.seed * 1000003ull + static_cast<std::uint64_t>(s) + name_hash);
    const GradcheckInputs in = c.make_inputs(rng);

    Tape tape;
    std::vector<Tensor> leaves;
    for (const Tensor& t : in.wrt) leaves.push_back(tape.leaf(t));
    const Tensor out = c.forward(leaves, in.fixed);
    const Buffer r = random_tensor(rng, out.shape()).data();
    const Tensor loss = sum(out * Tensor(out.shape(), r));
    const Gradients g = tape.backward(loss);

    std::vector<std::pair<std::size_t, Index>> coords;
    for (std::size_t i = 0; i < in.wrt.size(); ++i)
      for (Index k = 0; k < in.wrt[i].numel(); ++k) coords.emplace_back(i, k);
    for (std::size_t i = coords.size() - 1; i > 0 && coords.size() > 1; --i) std::swap(coords[i], coords[rng() % (i + 1)]);
    if (static_cast<Index>(coords.size()) > opt.max_probes) coords.resize(static_cast<std::size_t>(opt.max_probes));

    for (const auto& [i, k] : coords) {
      double analytic = g.buffer(leaves[i])[k];
      if (c.name == opt.corrupt) analytic = analytic * 1.05 + 1e-3;

      auto eval_at = [&](double delta) {
        std::vector<Tensor> moved = in.wrt;
        Buffer b = moved[i].data();
        b[k] += delta;
        moved[i] = Tensor(moved[i].shape(), std::move(b));
        return projected(c.forward(moved, in.fixed), r);
      };
      double numeric = (eval_at(opt.step) - eval_at(-opt.step)) / (2.0 * opt.step);
      // Piecewise-smooth ops (bilinear cells, masks) can have a kink inside
      // [x - h, x + h]; disagreement with a ten times finer step exposes it
      // and the finer estimate is the better one.
      const double fine = (eval_at(opt.step / 10.0) - eval_at(-opt.step / 10.0)) / (opt.step / 5.0);
      if (std::abs(fine - numeric) > opt.atol + opt.rtol * std::abs(fine)) {
        numeric = fine;
        ++res.refined;
      }
      const double err = std::abs(analytic - numeric);
      const double tol = opt.atol + opt.rtol * std::abs(numeric);
      res.max_abs_error = std::max(res.max_abs_error, err);
      res.max_rel_error = std::max(res.max_rel_error, err / std::max(std::abs(numeric), opt.atol));
      res.worst_ratio = std::max(res.worst_ratio, err / tol);
      if (!(err <= tol)) res.passed = false;
      ++res.probes;
    }
    ++res.seeds;
  }
  return res;
}

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt) {
  std::vector<GradcheckResult> out;
  for (const GradcheckCase& c : gradcheck_registry()) {
    if (!opt.only.empty() && std::find(opt.only.begin(), opt.only.end(), c.name) == opt.only.end()) continue;
    out.push_back(run_gradcheck_case(c, opt));
  }
  return out;
}

}  // namespace posedepth
