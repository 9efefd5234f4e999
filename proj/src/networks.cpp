#include "posedepth/networks.hpp"

#include <cmath>
#include <random>

#include "posedepth/ops.hpp"

namespace posedepth {

void NetworkConfig::validate() const {
  auto positive = [](const std::vector<Index>& v) {
    for (Index e : v)
      if (e <= 0) return false;
    return !v.empty();
  };
  if (!positive(encoder_channels)) throw Error(ErrorCode::InvalidArgument, "encoder_channels must be positive and non-empty");
  if (decoder_channels.size() + 1 != encoder_channels.size() || (!decoder_channels.empty() && !positive(decoder_channels))) {
    throw Error(ErrorCode::InvalidArgument, "decoder_channels needs one positive entry per encoder downsampling");
  }
  if (!positive(pose_encoder_channels)) throw Error(ErrorCode::InvalidArgument, "pose_encoder_channels must be positive");
  if (query_count <= 0 || feature_channels <= 0) throw Error(ErrorCode::InvalidArgument, "query/feature counts must be positive");
  (void)query_grid();
  if (!(d_min > 0.0) || !(d_max > d_min)) throw Error(ErrorCode::InvalidArgument, "need 0 < d_min < d_max");
  if (!std::isfinite(pose_scale)) throw Error(ErrorCode::InvalidArgument, "pose_scale must be finite");
  if (!std::isfinite(rotation_scale)) throw Error(ErrorCode::InvalidArgument, "rotation_scale must be finite");
}

Index NetworkConfig::query_grid() const {
  const Index g = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(query_count))));
  if (g * g != query_count) throw Error(ErrorCode::InvalidArgument, "query_count must be a perfect square");
  return g;
}

Index NetworkConfig::depth_divisor() const { return Index{1} << (encoder_channels.size() - 1); }

Index NetworkConfig::pose_divisor() const { return Index{1} << pose_encoder_channels.size(); }

// Parameters ------------------------------------------------------------------------

void Weights::insert(std::string name, Tensor t) { entries_.emplace_back(std::move(name), std::move(t)); }

const Tensor& Weights::operator[](std::string_view name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw Error(ErrorCode::InvalidArgument, "no weight named " + std::string(name));
}

Parameter& ParameterSet::add(std::string name, Shape shape, Buffer value) {
  if (contains(name)) throw Error(ErrorCode::InvalidArgument, "duplicate parameter " + name);
  if (numel(shape) != value.size()) throw Error(ErrorCode::ShapeMismatch, "parameter " + name);
  items_.push_back({std::move(name), std::move(shape), std::move(value)});
  return items_.back();
}

Parameter& ParameterSet::get(std::string_view name) {
  for (auto& p : items_)
    if (p.name == name) return p;
  throw Error(ErrorCode::InvalidArgument, "no parameter named " + std::string(name));
}

const Parameter& ParameterSet::get(std::string_view name) const { return const_cast<ParameterSet*>(this)->get(name); }

bool ParameterSet::contains(std::string_view name) const {
  for (const auto& p : items_)
    if (p.name == name) return true;
  return false;
}

Index ParameterSet::total_size() const {
  Index n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

Weights ParameterSet::bind(Tape* tape) const {
  Weights w;
  for (const auto& p : items_) {
    Tensor t(p.shape, p.value);
    w.insert(p.name, tape ? tape->leaf(t) : t);
  }
  return w;
}

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// Uniform in [-bound, bound]; built from raw engine bits so the stream is
  /// identical across standard library implementations.
  Buffer uniform(Index n, double bound) {
    Buffer b(n);
    for (Index i = 0; i < n; ++i) {
      const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
      b[i] = (2.0 * u - 1.0) * bound;
    }
    return b;
  }

 private:
  std::mt19937_64 rng_;
};

void add_conv(ParameterSet& ps, Initializer& init, const std::string& name, Index cout, Index cin, Index k,
              double gain = 1.0) {
  const Index fan_in = cin * k * k;
  ps.add(name + ".weight", {cout, cin, k, k},
         init.uniform(cout * fan_in, gain * std::sqrt(6.0 / static_cast<double>(fan_in))));
  ps.add(name + ".bias", {cout}, Buffer::Zero(cout));
}

void add_linear(ParameterSet& ps, Initializer& init, const std::string& name, Index in, Index out, double gain = 1.0) {
  ps.add(name + ".weight", {in, out}, init.uniform(in * out, gain * std::sqrt(3.0 / static_cast<double>(in))));
  ps.add(name + ".bias", {out}, Buffer::Zero(out));
}

Index bins_hidden(const NetworkConfig& cfg) { return std::max<Index>(1, cfg.query_count * cfg.feature_channels / 2); }

Tensor conv(const Tensor& x, const Weights& w, const std::string& name, Index padding) {
  return conv2d(x, w[name + ".weight"], w[name + ".bias"], 1, padding);
}

Tensor linear(const Tensor& x, const Weights& w, const std::string& name) {
  return add(matmul(x, w[name + ".weight"]), w[name + ".bias"]);
}

Tensor normalize_image(const Tensor& image) { return (image - 0.45) / 0.225; }

void check_image(const Tensor& image, Index channels, Index divisor, const char* who) {
  if (image.rank() != 3 || image.dim(0) != channels) {
    throw Error(ErrorCode::ShapeMismatch, std::string(who) + " expects a 3xHxW image, got " + to_string(image.shape()));
  }
  if (image.dim(1) % divisor != 0 || image.dim(2) % divisor != 0) {
    throw Error(ErrorCode::ShapeMismatch, std::string(who) + ": extents of " + to_string(image.shape()) +
                                              " are not divisible by " + std::to_string(divisor));
  }
}

}  // namespace

ParameterSet init_depth_parameters(const NetworkConfig& cfg) {
  cfg.validate();
  Initializer init(cfg.seed * 2 + 1);
  ParameterSet ps;
  const auto& enc = cfg.encoder_channels;
  const auto& dec = cfg.decoder_channels;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    add_conv(ps, init, "enc" + std::to_string(i), enc[i], i == 0 ? 3 : enc[i - 1], 3);
  }
  Index channels = enc.back();
  for (std::size_t j = 0; j < dec.size(); ++j) {
    const Index skip = enc[enc.size() - 2 - j];
    add_conv(ps, init, "dec" + std::to_string(j), dec[j], channels + skip, 3);
    channels = dec[j];
  }
  // Small gains keep V and the bin logits near zero at init.
  add_conv(ps, init, "feat", cfg.feature_channels, channels, 1, 0.5);
  add_linear(ps, init, "query", cfg.feature_channels, cfg.feature_channels, 0.5);
  add_linear(ps, init, "bins.fc1", cfg.query_count * cfg.feature_channels, bins_hidden(cfg));
  add_linear(ps, init, "bins.fc2", bins_hidden(cfg), cfg.query_count, 0.1);
  return ps;
}

ParameterSet init_pose_parameters(const NetworkConfig& cfg) {
  cfg.validate();
  Initializer init(cfg.seed * 2 + 2);
  ParameterSet ps;
  const auto& ch = cfg.pose_encoder_channels;
  for (std::size_t i = 0; i < ch.size(); ++i) add_conv(ps, init, "enc" + std::to_string(i), ch[i], i == 0 ? 6 : ch[i - 1], 3);
  ps.add("head.weight", {ch.back(), 6}, init.uniform(ch.back() * 6, std::sqrt(3.0 / static_cast<double>(ch.back()))));
  return ps;
}

Model Model::init(const NetworkConfig& config) {
  return {config, init_depth_parameters(config), init_pose_parameters(config)};
}

// Depth network ---------------------------------------------------------------------

FeatureMap depth_encoder_decoder(const Tensor& image, const Weights& w, const NetworkConfig& cfg) {
  check_image(image, 3, cfg.depth_divisor(), "depth_encoder_decoder");
  const std::size_t stages = cfg.encoder_channels.size();
  std::vector<Tensor> skips;
  Tensor x = normalize_image(image);
  for (std::size_t i = 0; i < stages; ++i) {
    if (i > 0) x = avg_pool2d(x, 2, 2);
    x = elu(conv(x, w, "enc" + std::to_string(i), 1));
    skips.push_back(x);
  }
  for (std::size_t j = 0; j + 1 < stages; ++j) {
    x = upsample_bilinear(x, 2);
    x = concat({x, skips[stages - 2 - j]}, 0);
    x = elu(conv(x, w, "dec" + std::to_string(j), 1));
  }
  return {conv(x, w, "feat", 0)};
}

QuerySet coarse_queries(const FeatureMap& features, const Weights& w, const NetworkConfig& cfg) {
  const Tensor& S = features.S;
  if (S.rank() != 3 || S.dim(0) != cfg.feature_channels) throw Error(ErrorCode::ShapeMismatch, "feature map channels");
  const Index g = cfg.query_grid();
  const Index c = S.dim(0), h = S.dim(1), wd = S.dim(2);
  if (h % g != 0 || wd % g != 0) throw Error(ErrorCode::ShapeMismatch, "feature map not divisible by the query grid");
  const Tensor pooled = transpose(reshape(avg_pool2d(S, h / g, wd / g), {c, g * g}));
  return {linear(pooled, w, "query")};
}

CostVolume self_cost_volume(const QuerySet& queries, const FeatureMap& features) {
  const Tensor& Q = queries.Q;
  const Tensor& S = features.S;
  if (Q.rank() != 2 || S.rank() != 3 || Q.dim(1) != S.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch, "queries " + to_string(Q.shape()) + " vs features " + to_string(S.shape()));
  }
  const Index h = S.dim(1), wd = S.dim(2);
  return {reshape(matmul(Q, reshape(S, {S.dim(0), h * wd})), {Q.dim(0), h, wd})};
}

Tensor bin_centers(const Tensor& logits, double d_min, double d_max) {
  const Index n = logits.numel();
  const Tensor widths = softmax(reshape(logits, {1, n}), 1);
  Buffer upper = Buffer::Zero(n * n);
  for (Index j = 0; j < n; ++j)
    for (Index i = j; i < n; ++i) upper[j * n + i] = 1.0;
  const Tensor cumulative = matmul(widths, Tensor({n, n}, std::move(upper)));
  const Tensor mid = cumulative - widths * 0.5;
  return reshape(mid * (d_max - d_min) + d_min, {n});
}

DepthBins compute_depth_bins(const CostVolume& volume, const FeatureMap& features, const Weights& w,
                             const NetworkConfig& cfg) {
  const Tensor& V = volume.V;
  const Tensor& S = features.S;
  if (V.rank() != 3 || S.rank() != 3 || V.dim(1) != S.dim(1) || V.dim(2) != S.dim(2)) {
    throw Error(ErrorCode::ShapeMismatch, "cost volume " + to_string(V.shape()) + " vs features " + to_string(S.shape()));
  }
  if (V.dim(0) != cfg.query_count || S.dim(0) != cfg.feature_channels) {
    throw Error(ErrorCode::ShapeMismatch, "query/feature counts differ from the network config");
  }
  const Index nq = V.dim(0), c = S.dim(0), pix = V.dim(1) * V.dim(2);
  const Tensor weights = softmax(reshape(V, {nq, pix}), 1);
  const Tensor summary = matmul(weights, transpose(reshape(S, {c, pix})));
  const Tensor hidden = elu(linear(reshape(summary, {1, nq * c}), w, "bins.fc1"));
  const Tensor logits = reshape(linear(hidden, w, "bins.fc2"), {nq});
  return {logits, bin_centers(logits, cfg.d_min, cfg.d_max)};
}

Tensor probabilistic_depth(const CostVolume& volume, const DepthBins& bins) {
  const Tensor& V = volume.V;
  if (V.rank() != 3 || bins.centers.numel() != V.dim(0)) throw Error(ErrorCode::ShapeMismatch, "bins vs cost volume");
  const Index nq = V.dim(0), h = V.dim(1), wd = V.dim(2);
  const Tensor planes = reshape(softmax(V, 0), {nq, h * wd});
  return reshape(matmul(reshape(bins.centers, {1, nq}), planes), {h, wd});
}

DepthNetOutput depthnet_forward(const Tensor& image, const Weights& w, const NetworkConfig& cfg) {
  DepthNetOutput out;
  out.features = depth_encoder_decoder(image, w, cfg);
  out.queries = coarse_queries(out.features, w, cfg);
  out.volume = self_cost_volume(out.queries, out.features);
  out.bins = compute_depth_bins(out.volume, out.features, w, cfg);
  out.depth = probabilistic_depth(out.volume, out.bins);
  return out;
}

// Pose network ----------------------------------------------------------------------

namespace {

Tensor pose_features(const Tensor& a, const Tensor& b, const Weights& w, const NetworkConfig& cfg) {
  Tensor x = concat({normalize_image(a), normalize_image(b)}, 0);
  for (std::size_t i = 0; i < cfg.pose_encoder_channels.size(); ++i) {
    x = avg_pool2d(relu(conv(x, w, "enc" + std::to_string(i), 1)), 2, 2);
  }
  return reshape(mean(x, {1, 2}), {1, x.dim(0)});
}

}  // namespace

Tensor posenet_forward(const Tensor& target, const Tensor& reference, const Weights& w, const NetworkConfig& cfg) {
  check_image(target, 3, cfg.pose_divisor(), "posenet_forward");
  if (reference.shape() != target.shape()) throw Error(ErrorCode::ShapeMismatch, "pose inputs differ in shape");
  // Pooled features of both input orders; their difference drops everything
  // the encoder responds to regardless of motion direction.
  const Tensor f = (pose_features(target, reference, w, cfg) - pose_features(reference, target, w, cfg)) * 0.5;
  const double r = cfg.pose_scale * cfg.rotation_scale, t = cfg.pose_scale;
  const Tensor gain({1, 6}, {r, r, r, t, t, t});
  return reshape(matmul(f, w["head.weight"]) * gain, {6});
}

}  // namespace posedepth
