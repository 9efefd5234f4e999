#include "posedepth/config.hpp"

#include <fstream>
#include <initializer_list>
#include <string_view>

namespace posedepth {

namespace {

[[noreturn]] void fail(const std::string& what) { throw Error(ErrorCode::ConfigParseError, what); }

void require_object(const Json& j, std::string_view where) {
  if (!j.is_object()) fail(std::string(where) + " must be a JSON object");
}

void check_keys(const Json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  require_object(j, where);
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) fail("unknown key '" + key + "' in " + std::string(where));
  }
}

/// Reads j[key] into out when present, converting type errors.
template <class T>
void read(const Json& j, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("bad value for '") + key + "': " + e.what());
  }
}

Eigen::Vector3d vec3(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) fail(std::string(what) + " must be an array of 3 numbers");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) fail(std::string(what) + " must hold numbers");
    v(i) = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

Json vec3_json(const Eigen::Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

const char* layout_name(LayoutKind k) {
  switch (k) {
    case LayoutKind::SinglePlane: return "single_plane";
    case LayoutKind::TwoPlanes: return "two_planes";
    case LayoutKind::SlantedPlane: return "slanted_plane";
  }
  return "";
}

const char* texture_name(TextureKind k) {
  switch (k) {
    case TextureKind::SmoothRamp: return "smooth_ramp";
    case TextureKind::BandLimitedNoise: return "band_limited_noise";
    case TextureKind::Checker: return "checker";
  }
  return "";
}

Json layout_json(const SceneLayout& l) {
  Json j{{"kind", layout_name(l.kind)}};
  switch (l.kind) {
    case LayoutKind::SinglePlane: j["depth"] = l.depth; break;
    case LayoutKind::TwoPlanes:
      j["d1"] = l.d1;
      j["d2"] = l.d2;
      j["split_fraction"] = l.split_fraction;
      break;
    case LayoutKind::SlantedPlane:
      j["normal"] = vec3_json(l.normal);
      j["offset"] = l.offset;
      break;
  }
  return j;
}

SceneLayout layout_from_json(const Json& j) {
  require_object(j, "layout");
  SceneLayout l;
  std::string kind;
  read(j, "kind", kind);
  if (kind == "single_plane") {
    check_keys(j, "layout", {"kind", "depth"});
    l.kind = LayoutKind::SinglePlane;
    read(j, "depth", l.depth);
  } else if (kind == "two_planes") {
    check_keys(j, "layout", {"kind", "d1", "d2", "split_fraction"});
    l.kind = LayoutKind::TwoPlanes;
    read(j, "d1", l.d1);
    read(j, "d2", l.d2);
    read(j, "split_fraction", l.split_fraction);
  } else if (kind == "slanted_plane") {
    check_keys(j, "layout", {"kind", "normal", "offset"});
    l.kind = LayoutKind::SlantedPlane;
    if (j.contains("normal")) l.normal = vec3(j["normal"], "layout.normal");
    read(j, "offset", l.offset);
  } else {
    fail("unknown layout kind '" + kind + "'");
  }
  return l;
}

Json texture_json(const TextureSpec& t) {
  Json j{{"kind", texture_name(t.kind)}};
  switch (t.kind) {
    case TextureKind::SmoothRamp:
      j["gradient"] = t.gradient;
      j["offset"] = t.ramp_offset;
      break;
    case TextureKind::BandLimitedNoise:
      j["octaves"] = t.octaves;
      j["base_frequency"] = t.base_frequency;
      j["seed"] = t.seed;
      break;
    case TextureKind::Checker: j["period"] = t.period; break;
  }
  return j;
}

TextureSpec texture_from_json(const Json& j) {
  require_object(j, "texture");
  TextureSpec t;
  std::string kind;
  read(j, "kind", kind);
  if (kind == "smooth_ramp") {
    check_keys(j, "texture", {"kind", "gradient", "offset"});
    t.kind = TextureKind::SmoothRamp;
    read(j, "gradient", t.gradient);
    read(j, "offset", t.ramp_offset);
  } else if (kind == "band_limited_noise") {
    check_keys(j, "texture", {"kind", "octaves", "base_frequency", "seed"});
    t.kind = TextureKind::BandLimitedNoise;
    read(j, "octaves", t.octaves);
    read(j, "base_frequency", t.base_frequency);
    read(j, "seed", t.seed);
  } else if (kind == "checker") {
    check_keys(j, "texture", {"kind", "period"});
    t.kind = TextureKind::Checker;
    read(j, "period", t.period);
  } else {
    fail("unknown texture kind '" + kind + "'");
  }
  return t;
}

}  // namespace

void RunConfig::validate() const {
  scene.validate();
  network.validate();
  loss.validate();
  if (!(optimizer.learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be positive");
  if (optimizer.steps < 1) throw Error(ErrorCode::InvalidArgument, "steps must be at least 1");
  if (optimizer.batch_size != 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be 1");
  if (!(eval.d_min_eval > 0.0) || !(eval.d_max_eval > eval.d_min_eval)) {
    throw Error(ErrorCode::InvalidArgument, "need 0 < d_min_eval < d_max_eval");
  }
  if (scene.camera_motion.size() < 3) throw Error(ErrorCode::InvalidArgument, "training needs at least 3 frames");
  if (scene.width % std::max(network.depth_divisor(), network.pose_divisor()) != 0 ||
      scene.height % std::max(network.depth_divisor(), network.pose_divisor()) != 0) {
    throw Error(ErrorCode::InvalidArgument, "scene extents are not divisible by the network downsampling");
  }
}

void RunConfig::set_seed(std::uint64_t seed) {
  optimizer.seed = seed;
  network.seed = seed;
}

Json to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

Json to_json(const Pose& p) { return {{"axis_angle", vec3_json(p.axis_angle)}, {"translation", vec3_json(p.translation)}}; }

Json to_json(const SceneConfig& s) {
  Json motion = Json::array();
  for (const Pose& p : s.camera_motion) motion.push_back(to_json(p));
  return {{"width", s.width},   {"height", s.height},          {"intrinsics", to_json(s.intrinsics)},
          {"layout", layout_json(s.layout)}, {"texture", texture_json(s.texture)}, {"camera_motion", motion},
          {"seed", s.seed}};
}

Json to_json(const NetworkConfig& n) {
  return {{"encoder_channels", n.encoder_channels},
          {"decoder_channels", n.decoder_channels},
          {"query_count", n.query_count},
          {"feature_channels", n.feature_channels},
          {"pose_encoder_channels", n.pose_encoder_channels},
          {"pose_scale", n.pose_scale},
          {"rotation_scale", n.rotation_scale},
          {"d_min", n.d_min},
          {"d_max", n.d_max},
          {"seed", n.seed}};
}

Json to_json(const LossConfig& l) {
  return {{"alpha", l.alpha},     {"lambda_s", l.lambda_s}, {"ssim_window", l.ssim_window},
          {"ssim_c1", l.ssim_c1}, {"ssim_c2", l.ssim_c2},   {"automask_enabled", l.automask_enabled}};
}

Json to_json(const OptimizerConfig& o) {
  Json j{{"kind", o.kind == OptimizerKind::Sgd ? "sgd" : "adam"},
         {"learning_rate", o.learning_rate},
         {"steps", o.steps},
         {"batch_size", o.batch_size},
         {"seed", o.seed}};
  if (o.kind == OptimizerKind::Adam) {
    j["beta1"] = o.beta1;
    j["beta2"] = o.beta2;
    j["epsilon"] = o.epsilon;
  }
  return j;
}

Json to_json(const EvalConfig& e) { return {{"d_min_eval", e.d_min_eval}, {"d_max_eval", e.d_max_eval}}; }

Json to_json(const RunConfig& r) {
  return {{"scene", to_json(r.scene)},         {"network", to_json(r.network)}, {"loss", to_json(r.loss)},
          {"optimizer", to_json(r.optimizer)}, {"eval", to_json(r.eval)},       {"output_dir", r.output_dir}};
}

CameraIntrinsics intrinsics_from_json(const Json& j) {
  check_keys(j, "intrinsics", {"fx", "fy", "cx", "cy", "width", "height"});
  CameraIntrinsics k;
  read(j, "fx", k.fx);
  read(j, "fy", k.fy);
  read(j, "cx", k.cx);
  read(j, "cy", k.cy);
  read(j, "width", k.width);
  read(j, "height", k.height);
  return k;
}

Pose pose_from_json(const Json& j) {
  check_keys(j, "pose", {"axis_angle", "translation"});
  Pose p;
  if (j.contains("axis_angle")) p.axis_angle = vec3(j["axis_angle"], "axis_angle");
  if (j.contains("translation")) p.translation = vec3(j["translation"], "translation");
  return p;
}

SceneConfig scene_from_json(const Json& j) {
  check_keys(j, "scene", {"width", "height", "intrinsics", "layout", "texture", "camera_motion", "seed"});
  SceneConfig s;
  read(j, "width", s.width);
  read(j, "height", s.height);
  read(j, "seed", s.seed);
  if (j.contains("intrinsics")) s.intrinsics = intrinsics_from_json(j["intrinsics"]);
  if (j.contains("layout")) s.layout = layout_from_json(j["layout"]);
  if (j.contains("texture")) s.texture = texture_from_json(j["texture"]);
  if (j.contains("camera_motion")) {
    if (!j["camera_motion"].is_array()) fail("camera_motion must be an array of poses");
    for (const Json& p : j["camera_motion"]) s.camera_motion.push_back(pose_from_json(p));
  }
  return s;
}

NetworkConfig network_from_json(const Json& j) {
  check_keys(j, "network", {"encoder_channels", "decoder_channels", "query_count", "feature_channels",
                            "pose_encoder_channels", "pose_scale", "rotation_scale", "d_min", "d_max", "seed"});
  NetworkConfig n;
  read(j, "encoder_channels", n.encoder_channels);
  read(j, "decoder_channels", n.decoder_channels);
  read(j, "query_count", n.query_count);
  read(j, "feature_channels", n.feature_channels);
  read(j, "pose_encoder_channels", n.pose_encoder_channels);
  read(j, "pose_scale", n.pose_scale);
  read(j, "rotation_scale", n.rotation_scale);
  read(j, "d_min", n.d_min);
  read(j, "d_max", n.d_max);
  read(j, "seed", n.seed);
  return n;
}

LossConfig loss_from_json(const Json& j) {
  check_keys(j, "loss", {"alpha", "lambda_s", "ssim_window", "ssim_c1", "ssim_c2", "automask_enabled"});
  LossConfig l;
  read(j, "alpha", l.alpha);
  read(j, "lambda_s", l.lambda_s);
  read(j, "ssim_window", l.ssim_window);
  read(j, "ssim_c1", l.ssim_c1);
  read(j, "ssim_c2", l.ssim_c2);
  read(j, "automask_enabled", l.automask_enabled);
  return l;
}

OptimizerConfig optimizer_from_json(const Json& j) {
  check_keys(j, "optimizer", {"kind", "learning_rate", "steps", "batch_size", "seed", "beta1", "beta2", "epsilon"});
  OptimizerConfig o;
  std::string kind = "sgd";
  read(j, "kind", kind);
  if (kind == "sgd") o.kind = OptimizerKind::Sgd;
  else if (kind == "adam") o.kind = OptimizerKind::Adam;
  else fail("unknown optimizer kind '" + kind + "'");
  read(j, "learning_rate", o.learning_rate);
  read(j, "steps", o.steps);
  read(j, "batch_size", o.batch_size);
  read(j, "seed", o.seed);
  read(j, "beta1", o.beta1);
  read(j, "beta2", o.beta2);
  read(j, "epsilon", o.epsilon);
  return o;
}

EvalConfig eval_from_json(const Json& j) {
  check_keys(j, "eval", {"d_min_eval", "d_max_eval"});
  EvalConfig e;
  read(j, "d_min_eval", e.d_min_eval);
  read(j, "d_max_eval", e.d_max_eval);
  return e;
}

RunConfig run_config_from_json(const Json& j) {
  check_keys(j, "config", {"scene", "network", "loss", "optimizer", "eval", "output_dir"});
  RunConfig r = default_run_config();
  if (j.contains("scene")) r.scene = scene_from_json(j["scene"]);
  if (j.contains("network")) r.network = network_from_json(j["network"]);
  if (j.contains("loss")) r.loss = loss_from_json(j["loss"]);
  if (j.contains("optimizer")) r.optimizer = optimizer_from_json(j["optimizer"]);
  if (j.contains("eval")) r.eval = eval_from_json(j["eval"]);
  read(j, "output_dir", r.output_dir);
  return r;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig r = run_config_from_json(read_json_file(path));
  r.validate();
  return r;
}

RunConfig default_run_config() {
  RunConfig r;
  r.scene = default_scene();
  return r;
}

}  // namespace posedepth
