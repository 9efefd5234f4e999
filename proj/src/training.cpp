#include "posedepth/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "posedepth/dtn.hpp"
#include "posedepth/geometry.hpp"
#include "posedepth/ops.hpp"

namespace posedepth {

// Optimizers -------------------------------------------------------------------------

namespace {

template <class Fn>
void for_each_parameter(Model& model, const ModelGradients& grads, Fn&& fn) {
  auto& depth = model.depth.items();
  auto& pose = model.pose.items();
  if (grads.depth.size() != depth.size() || grads.pose.size() != pose.size()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient list does not match the model");
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < depth.size(); ++i) fn(k++, depth[i].value, grads.depth[i]);
  for (std::size_t i = 0; i < pose.size(); ++i) fn(k++, pose[i].value, grads.pose[i]);
}

}  // namespace

void SgdOptimizer::update(Model& model, const ModelGradients& grads) {
  for_each_parameter(model, grads, [&](std::size_t, Buffer& w, const Buffer& g) { w -= lr_ * g; });
}

void AdamOptimizer::update(Model& model, const ModelGradients& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for_each_parameter(model, grads, [&](std::size_t k, Buffer& w, const Buffer& g) {
    if (m_.size() <= k) {
      m_.push_back(Buffer::Zero(g.size()));
      v_.push_back(Buffer::Zero(g.size()));
    }
    m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
    v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g.square();
    w -= cfg_.learning_rate * (m_[k] / c1) / ((v_[k] / c2).sqrt() + cfg_.epsilon);
  });
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg) {
  if (cfg.kind == OptimizerKind::Adam) return std::make_unique<AdamOptimizer>(cfg);
  return std::make_unique<SgdOptimizer>(cfg.learning_rate);
}

// Data ---------------------------------------------------------------------------------

Sequence Sequence::render(const SceneConfig& scene) {
  Sequence seq;
  seq.intrinsics = scene.intrinsics;
  seq.poses = scene.camera_motion;
  for (RenderedFrame& f : render_all(scene)) {
    seq.images.push_back(std::move(f.image));
    seq.depths.push_back(std::move(f.depth));
  }
  return seq;
}

Sequence Sequence::from_directory(const SceneDirectory& dir) {
  return {dir.config.intrinsics, dir.images, dir.depths, dir.poses};
}

// One step -------------------------------------------------------------------------------

StepLoss view_synthesis_loss(const Tensor& target, const Tensor& prev, const Tensor& next, const Tensor& depth,
                             const Tensor& pose_prev, const Tensor& pose_next, const CameraIntrinsics& K,
                             const LossConfig& cfg) {
  const SynthesizedView from_prev = synthesize_view(prev, depth, pose_prev, K);
  const SynthesizedView from_next = synthesize_view(next, depth, pose_next, K);
  StepLoss out;
  out.pose_prev = pose_prev;
  out.pose_next = pose_next;
  out.reprojection = min_reprojection_loss(target, {{from_prev.image, from_prev.valid}, {from_next.image, from_next.valid}},
                                           {prev, next}, cfg);
  out.loss = total_loss(out.reprojection, smoothness_loss(depth, target), cfg);
  return out;
}

StepLoss forward_step(const Weights& depth_w, const Weights& pose_w, const NetworkConfig& net, const Tensor& prev,
                      const Tensor& target, const Tensor& next, const CameraIntrinsics& K, const LossConfig& cfg) {
  DepthNetOutput depth = depthnet_forward(target, depth_w, net);
  const Tensor pose_prev = posenet_forward(target, prev, pose_w, net);
  const Tensor pose_next = posenet_forward(target, next, pose_w, net);
  StepLoss out = view_synthesis_loss(target, prev, next, depth.depth, pose_prev, pose_next, K, cfg);
  out.depth = std::move(depth);
  return out;
}

StepLog compute_gradients(const Model& model, const Sequence& seq, Index frame, const LossConfig& cfg,
                          ModelGradients& grads) {
  if (frame < 1 || frame + 1 >= seq.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "frame " + std::to_string(frame) + " has no two neighbours");
  }
  const auto f = static_cast<std::size_t>(frame);
  Tape tape;
  const Weights depth_w = model.depth.bind(&tape);
  const Weights pose_w = model.pose.bind(&tape);
  const StepLoss step = forward_step(depth_w, pose_w, model.config, seq.images[f - 1], seq.images[f],
                                     seq.images[f + 1], seq.intrinsics, cfg);
  const Gradients g = tape.backward(step.loss.total);

  grads.depth.clear();
  grads.pose.clear();
  for (const auto& [name, t] : depth_w.entries()) grads.depth.push_back(g.buffer(t));
  for (const auto& [name, t] : pose_w.entries()) grads.pose.push_back(g.buffer(t));

  StepLog log;
  log.frame = frame;
  log.total = step.loss.total.item();
  log.photometric = step.loss.photometric.item();
  log.smoothness = step.loss.smoothness.item();
  log.mask_coverage = step.loss.mask_coverage;
  return log;
}

namespace {

bool finite(const ModelGradients& g) {
  for (const Buffer& b : g.depth)
    if (!b.isFinite().all()) return false;
  for (const Buffer& b : g.pose)
    if (!b.isFinite().all()) return false;
  return true;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const Sequence& seq, const StepCallback& on_step) {
  cfg.validate();
  if (seq.size() < 3) throw Error(ErrorCode::InvalidArgument, "training needs at least 3 frames");
  TrainResult result{Model::init(cfg.network), {}};
  auto optimizer = make_optimizer(cfg.optimizer);
  std::mt19937_64 rng(cfg.optimizer.seed ^ 0x7A11'0000'5EEDull);

  std::vector<Index> order;
  for (Index t = 1; t + 1 < seq.size(); ++t) order.push_back(t);
  std::size_t cursor = order.size();

  ModelGradients grads;
  for (Index step = 1; step <= cfg.optimizer.steps; ++step) {
    if (cursor == order.size()) {
      for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
      cursor = 0;
    }
    StepLog log;
    try {
      log = compute_gradients(result.model, seq, order[cursor++], cfg.loss, grads);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteLoss) throw;
      throw Error(ErrorCode::NonFiniteLoss, "non-finite loss at step " + std::to_string(step));
    }
    if (!finite(grads)) throw Error(ErrorCode::NonFiniteLoss, "non-finite gradient at step " + std::to_string(step));
    log.step = step;
    optimizer->update(result.model, grads);
    result.log.push_back(log);
    if (on_step) on_step(log);
  }
  return result;
}

void write_train_log(const std::filesystem::path& path, const std::vector<StepLog>& log) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  out << "step,frame,total,photometric,smoothness,mask_coverage\n";
  char line[256];
  for (const StepLog& s : log) {
    std::snprintf(line, sizeof line, "%lld,%lld,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(s.step),
                  static_cast<long long>(s.frame), s.total, s.photometric, s.smoothness, s.mask_coverage);
    out << line;
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

// Checkpoints ---------------------------------------------------------------------------

namespace {

constexpr const char* kManifest = "manifest.json";

Json save_set(const std::filesystem::path& dir, const ParameterSet& ps, const std::string& prefix) {
  Json files = Json::object();
  for (const Parameter& p : ps.items()) {
    const std::string file = prefix + "." + p.name + ".dtn";
    write_dtn(dir / file, Tensor(p.shape, p.value));
    files[p.name] = file;
  }
  return files;
}

void load_set(const std::filesystem::path& dir, ParameterSet& ps, const Json& files, const std::string& which) {
  if (!files.is_object() || files.size() != ps.items().size()) {
    throw Error(ErrorCode::ManifestMismatch, which + " parameter list does not match the network config");
  }
  for (Parameter& p : ps.items()) {
    if (!files.contains(p.name) || !files[p.name].is_string()) {
      throw Error(ErrorCode::ManifestMismatch, "manifest lacks " + which + " parameter " + p.name);
    }
    const Tensor t = read_dtn(dir / files[p.name].get<std::string>());
    if (t.shape() != p.shape) {
      throw Error(ErrorCode::ManifestMismatch, which + " parameter " + p.name + " has extents " + to_string(t.shape()) +
                                                   ", expected " + to_string(p.shape));
    }
    p.value = t.data();
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Model& model, Index width, Index height) {
  std::filesystem::create_directories(dir);
  Json manifest;
  manifest["network"] = to_json(model.config);
  manifest["image"] = {{"width", width}, {"height", height}};
  manifest["depth"] = save_set(dir, model.depth, "depth");
  manifest["pose"] = save_set(dir, model.pose, "pose");
  write_json_file(dir / kManifest, manifest);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const Json manifest = read_json_file(dir / kManifest);
  for (const char* key : {"network", "image", "depth", "pose"}) {
    if (!manifest.contains(key)) throw Error(ErrorCode::ManifestMismatch, std::string("manifest lacks '") + key + "'");
  }
  Checkpoint ck;
  ck.model = Model::init(network_from_json(manifest["network"]));
  try {
    ck.width = manifest["image"].at("width").get<Index>();
    ck.height = manifest["image"].at("height").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestMismatch, std::string("bad image extents: ") + e.what());
  }
  load_set(dir, ck.model.depth, manifest["depth"], "depth");
  load_set(dir, ck.model.pose, manifest["pose"], "pose");
  return ck;
}

// Inference and evaluation --------------------------------------------------------------

Tensor predict_depth(const Model& model, const Tensor& image) {
  return depthnet_forward(image, model.depth.bind(nullptr), model.config).depth;
}

Pose predict_pose(const Model& model, const Tensor& target, const Tensor& reference) {
  return Pose::from_tensor(posenet_forward(target, reference, model.pose.bind(nullptr), model.config));
}

DepthEvaluation evaluate_depth(const std::vector<Tensor>& predictions, const std::vector<Tensor>& ground_truth,
                               const EvalConfig& cfg) {
  if (predictions.size() != ground_truth.size()) {
    throw Error(ErrorCode::ShapeMismatch, "one prediction per ground-truth frame is required");
  }
  if (ground_truth.empty()) throw Error(ErrorCode::MissingGroundTruth, "no ground-truth depth to evaluate against");
  DepthEvaluation out;
  std::vector<MetricsReport> reports;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Tensor mask = evaluation_mask(ground_truth[i], cfg.d_min_eval, cfg.d_max_eval);
    const MedianScaled ms = median_scale(predictions[i], ground_truth[i], mask);
    FrameMetrics fm;
    fm.frame = static_cast<Index>(i);
    fm.scale_ratio = ms.ratio;
    fm.report = compute_metrics(ms.scaled, ground_truth[i], cfg.d_min_eval, cfg.d_max_eval);
    reports.push_back(fm.report);
    out.frames.push_back(fm);
  }
  out.mean = mean_report(reports);
  return out;
}

DepthEvaluation evaluate_depth(const Model& model, const Sequence& seq, const EvalConfig& cfg) {
  if (seq.depths.size() != seq.images.size()) {
    throw Error(ErrorCode::MissingGroundTruth, "sequence lacks ground-truth depth for some frames");
  }
  std::vector<Tensor> predictions;
  for (const Tensor& image : seq.images) predictions.push_back(predict_depth(model, image));
  return evaluate_depth(predictions, seq.depths, cfg);
}

double evaluate_pose(const Model& model, const Sequence& seq, const EvalConfig& cfg) {
  if (seq.size() < 3 || seq.poses.size() != seq.images.size() || seq.depths.size() != seq.images.size()) {
    throw Error(ErrorCode::MissingGroundTruth, "pose evaluation needs poses and depth for every frame");
  }
  double total = 0.0;
  Index count = 0;
  for (Index t = 1; t + 1 < seq.size(); ++t) {
    const auto f = static_cast<std::size_t>(t);
    const Tensor& gt_depth = seq.depths[f];
    const MedianScaled ms =
        median_scale(predict_depth(model, seq.images[f]), gt_depth, evaluation_mask(gt_depth, cfg.d_min_eval, cfg.d_max_eval));
    for (const std::size_t n : {f - 1, f + 1}) {
      const Pose gt = relative_pose(seq.poses[f], seq.poses[n]);
      const Pose pred = predict_pose(model, seq.images[f], seq.images[n]);
      total += rotation_distance(pred, gt) + (ms.ratio * pred.translation - gt.translation).norm();
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

void write_metrics_csv(const std::filesystem::path& path, const DepthEvaluation& eval) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  out << "frame," << kMetricsCsvHeader << '\n';
  for (const FrameMetrics& f : eval.frames) out << f.frame << ',' << to_csv_row(f.report) << '\n';
  out << "mean," << to_csv_row(eval.mean) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace posedepth
