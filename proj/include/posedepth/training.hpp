#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "posedepth/config.hpp"
#include "posedepth/losses.hpp"
#include "posedepth/metrics.hpp"
#include "posedepth/networks.hpp"
#include "posedepth/synthdata.hpp"

namespace posedepth {

/// Gradient buffers laid out like the depth and pose parameter sets.
struct ModelGradients {
  std::vector<Buffer> depth;
  std::vector<Buffer> pose;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void update(Model& model, const ModelGradients& grads) = 0;
};

/// Fixed-rate gradient descent: w -= lr * g.
class SgdOptimizer final : public Optimizer {
 public:
  explicit SgdOptimizer(double learning_rate) : lr_(learning_rate) {}
  void update(Model& model, const ModelGradients& grads) override;

 private:
  double lr_;
};

class AdamOptimizer final : public Optimizer {
 public:
  explicit AdamOptimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}
  void update(Model& model, const ModelGradients& grads) override;

 private:
  OptimizerConfig cfg_;
  std::vector<Buffer> m_, v_;
  Index t_ = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg);

/// Image sequence with camera poses; depth is only needed for evaluation.
struct Sequence {
  CameraIntrinsics intrinsics;
  std::vector<Tensor> images;
  std::vector<Tensor> depths;
  std::vector<Pose> poses;  ///< camera-to-world

  static Sequence render(const SceneConfig& scene);
  static Sequence from_directory(const SceneDirectory& dir);
  Index size() const { return static_cast<Index>(images.size()); }
};

struct StepLog {
  Index step = 0;
  Index frame = 0;
  double total = 0.0;
  double photometric = 0.0;
  double smoothness = 0.0;
  double mask_coverage = 0.0;
};

/// Loss terms of one training example, recorded on `tape` when given.
struct StepLoss {
  LossBreakdown loss;
  DepthNetOutput depth;
  Tensor pose_prev, pose_next;  ///< predicted T_{t -> t-1}, T_{t -> t+1}
  ReprojectionLoss reprojection;
};

/// Photometric plus smoothness objective for the target frame given a depth
/// map and the two relative poses.
StepLoss view_synthesis_loss(const Tensor& target, const Tensor& prev, const Tensor& next, const Tensor& depth,
                             const Tensor& pose_prev, const Tensor& pose_next, const CameraIntrinsics& K,
                             const LossConfig& cfg);

/// Full forward pass of both networks on frames (t-1, t, t+1).
StepLoss forward_step(const Weights& depth_w, const Weights& pose_w, const NetworkConfig& net, const Tensor& prev,
                      const Tensor& target, const Tensor& next, const CameraIntrinsics& K, const LossConfig& cfg);

/// Loss value and parameter gradients for one triple centred on `frame`.
StepLog compute_gradients(const Model& model, const Sequence& seq, Index frame, const LossConfig& cfg,
                          ModelGradients& grads);

struct TrainResult {
  Model model;
  std::vector<StepLog> log;
};

using StepCallback = std::function<void(const StepLog&)>;

/// Runs cfg.optimizer.steps updates over the triples t = 1 .. N-2, visiting
/// them in a fresh seeded permutation each epoch. Throws NonFiniteLoss with
/// the step index.
TrainResult train(const RunConfig& cfg, const Sequence& seq, const StepCallback& on_step = {});

void write_train_log(const std::filesystem::path& path, const std::vector<StepLog>& log);

/// Checkpoint directory: one DTN1 file per parameter and manifest.json with
/// the network config, training image extents and the name-to-file map.
void save_checkpoint(const std::filesystem::path& dir, const Model& model, Index width, Index height);

struct Checkpoint {
  Model model;
  Index width = 0;
  Index height = 0;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Depth prediction for a single image.
Tensor predict_depth(const Model& model, const Tensor& image);

/// Relative pose prediction T_{target -> reference}.
Pose predict_pose(const Model& model, const Tensor& target, const Tensor& reference);

struct FrameMetrics {
  Index frame = 0;
  MetricsReport report;
  double scale_ratio = 1.0;
};

struct DepthEvaluation {
  std::vector<FrameMetrics> frames;
  MetricsReport mean;
};

/// Median-scaled metrics for each frame with ground truth, ordered by frame.
DepthEvaluation evaluate_depth(const std::vector<Tensor>& predictions, const std::vector<Tensor>& ground_truth,
                               const EvalConfig& cfg);
DepthEvaluation evaluate_depth(const Model& model, const Sequence& seq, const EvalConfig& cfg);

/// Mean over frames t = 1 .. N-2 and both neighbours of the geodesic rotation
/// error plus the translation error norm. Predicted translations are scaled
/// by the frame's depth median-scaling ratio before comparison.
double evaluate_pose(const Model& model, const Sequence& seq, const EvalConfig& cfg);

/// Per-frame rows (frame index first) and a final row whose frame is "mean".
void write_metrics_csv(const std::filesystem::path& path, const DepthEvaluation& eval);

}  // namespace posedepth
