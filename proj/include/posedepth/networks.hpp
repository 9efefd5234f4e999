#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "posedepth/tensor.hpp"

namespace posedepth {

/// Architecture hyperparameters for the depth and pose networks.
///
/// Depth encoder stage 0 runs at full resolution; every further stage halves
/// the resolution (2x2 average pool, then a 3x3 conv). The decoder has one
/// stage per halving, upsampling and merging the matching encoder skip.
/// Each pose encoder stage is conv 3x3 -> relu -> 2x2 average pool.
struct NetworkConfig {
  std::vector<Index> encoder_channels{8, 16, 32};
  std::vector<Index> decoder_channels{16, 16};
  Index query_count = 16;
  Index feature_channels = 16;
  std::vector<Index> pose_encoder_channels{16, 32, 64, 128};
  double pose_scale = 0.5;
  /// Extra factor on the three axis-angle outputs, applied after pose_scale.
  double rotation_scale = 0.1;
  double d_min = 0.1;
  double d_max = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
  /// Side of the square query patch grid (query_count == grid * grid).
  Index query_grid() const;
  /// Image extents must be multiples of this for the depth network.
  Index depth_divisor() const;
  Index pose_divisor() const;
};

struct FeatureMap {
  Tensor S;  ///< C x h x w
};

struct QuerySet {
  Tensor Q;  ///< Nq x C
};

struct CostVolume {
  Tensor V;  ///< Nq x h x w
};

struct DepthBins {
  Tensor logits;   ///< Nq
  Tensor centers;  ///< Nq, strictly increasing inside (d_min, d_max)
};

struct Parameter {
  std::string name;
  Shape shape;
  Buffer value;
};

/// Tensors bound to a parameter set for one forward pass.
class Weights {
 public:
  void insert(std::string name, Tensor t);
  const Tensor& operator[](std::string_view name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Ordered, named parameter storage that outlives individual tapes.
class ParameterSet {
 public:
  Parameter& add(std::string name, Shape shape, Buffer value);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Parameter>& items() noexcept { return items_; }
  const std::vector<Parameter>& items() const noexcept { return items_; }
  Index total_size() const;

  /// Leaves on `tape`, or constants when `tape` is null.
  Weights bind(Tape* tape) const;

 private:
  std::vector<Parameter> items_;
};

/// Depth and pose network parameters initialized from `config.seed`.
struct Model {
  NetworkConfig config;
  ParameterSet depth;
  ParameterSet pose;

  static Model init(const NetworkConfig& config);
};

ParameterSet init_depth_parameters(const NetworkConfig& cfg);
ParameterSet init_pose_parameters(const NetworkConfig& cfg);

/// U-shaped encoder-decoder producing the full-resolution feature map S.
FeatureMap depth_encoder_decoder(const Tensor& image, const Weights& w, const NetworkConfig& cfg);

/// Average-pools S to the query patch grid and projects each pooled vector.
QuerySet coarse_queries(const FeatureMap& features, const Weights& w, const NetworkConfig& cfg);

/// V[i, j, k] = dot(Q[i], S[:, j, k]).
CostVolume self_cost_volume(const QuerySet& queries, const FeatureMap& features);

/// Width-normalized cumulative bin centers from raw bin logits.
Tensor bin_centers(const Tensor& logits, double d_min, double d_max);

/// Softmax-weighted feature summary per query plane, concatenated and
/// regressed by a two-layer MLP into bin logits.
DepthBins compute_depth_bins(const CostVolume& volume, const FeatureMap& features, const Weights& w,
                             const NetworkConfig& cfg);

/// Per-pixel convex combination of bin centers with weights from a softmax
/// across the query axis.
Tensor probabilistic_depth(const CostVolume& volume, const DepthBins& bins);

struct DepthNetOutput {
  FeatureMap features;
  QuerySet queries;
  CostVolume volume;
  DepthBins bins;
  Tensor depth;  ///< H x W
};

DepthNetOutput depthnet_forward(const Tensor& image, const Weights& w, const NetworkConfig& cfg);

/// Relative pose target -> reference as [rx, ry, rz, tx, ty, tz]. Swapping the
/// inputs negates the output.
Tensor posenet_forward(const Tensor& target, const Tensor& reference, const Weights& w, const NetworkConfig& cfg);

}  // namespace posedepth
