#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "posedepth/geometry.hpp"
#include "posedepth/losses.hpp"
#include "posedepth/networks.hpp"
#include "posedepth/synthdata.hpp"

namespace posedepth {

using Json = nlohmann::json;

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double learning_rate = 0.1;
  Index steps = 2000;
  Index batch_size = 1;
  std::uint64_t seed = 0;
  // Adam only.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct EvalConfig {
  double d_min_eval = 0.1;
  double d_max_eval = 10.0;
};

struct RunConfig {
  SceneConfig scene;
  NetworkConfig network;
  LossConfig loss;
  OptimizerConfig optimizer;
  EvalConfig eval;
  std::string output_dir = "run";

  void validate() const;
  /// Sets the optimizer seed and the network initialization seed.
  void set_seed(std::uint64_t seed);
};

// JSON mappings. Readers reject unknown keys and wrong types with
// ConfigParseError; absent keys keep their defaults.

Json to_json(const CameraIntrinsics& k);
Json to_json(const Pose& p);
Json to_json(const SceneConfig& s);
Json to_json(const NetworkConfig& n);
Json to_json(const LossConfig& l);
Json to_json(const OptimizerConfig& o);
Json to_json(const EvalConfig& e);
Json to_json(const RunConfig& r);

CameraIntrinsics intrinsics_from_json(const Json& j);
Pose pose_from_json(const Json& j);
SceneConfig scene_from_json(const Json& j);
NetworkConfig network_from_json(const Json& j);
LossConfig loss_from_json(const Json& j);
OptimizerConfig optimizer_from_json(const Json& j);
EvalConfig eval_from_json(const Json& j);
RunConfig run_config_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Settings used by the desk-scale training checks: the default scene and a
/// learning rate tuned for it.
RunConfig default_run_config();

}  // namespace posedepth
