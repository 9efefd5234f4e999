// posedepth command-line entry point: gen, train, infer, eval, gradcheck.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "posedepth/config.hpp"
#include "posedepth/dtn.hpp"
#include "posedepth/gradcheck.hpp"
#include "posedepth/image_io.hpp"
#include "posedepth/synthdata.hpp"
#include "posedepth/training.hpp"

namespace fs = std::filesystem;
using namespace posedepth;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

bool numerical(ErrorCode c) {
  switch (c) {
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::DomainError:
    case ErrorCode::NonPositiveDepth:
    case ErrorCode::NonPositivePrediction:
      return true;
    default:
      return false;
  }
}

RunConfig resolve_config(const std::string& path, std::optional<std::uint64_t> seed) {
  RunConfig cfg = path.empty() ? default_run_config() : load_run_config(path);
  if (seed) cfg.set_seed(*seed);
  cfg.validate();
  return cfg;
}

int cmd_gen(const RunConfig& cfg, const fs::path& out) {
  write_scene_directory(out, cfg.scene);
  std::cout << "wrote " << cfg.scene.camera_motion.size() << " frames to " << out.string() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const fs::path& out, const std::string& scene_dir) {
  const Sequence seq = scene_dir.empty() ? Sequence::render(cfg.scene) : Sequence::from_directory(read_scene_directory(scene_dir));
  fs::create_directories(out);
  write_json_file(out / "config.json", to_json(cfg));
  const Index report_every = std::max<Index>(1, cfg.optimizer.steps / 10);
  const TrainResult result = train(cfg, seq, [&](const StepLog& s) {
    if (s.step % report_every == 0 || s.step == 1) {
      std::printf("step %5lld  total %.6f  photometric %.6f  smoothness %.6f  coverage %.3f\n",
                  static_cast<long long>(s.step), s.total, s.photometric, s.smoothness, s.mask_coverage);
    }
  });
  write_train_log(out / "train_log.csv", result.log);
  save_checkpoint(out / "checkpoint", result.model, seq.intrinsics.width, seq.intrinsics.height);
  std::cout << "checkpoint written to " << (out / "checkpoint").string() << '\n';
  return kExitOk;
}

int cmd_infer(const fs::path& checkpoint, const fs::path& image_path, const fs::path& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Tensor image = read_ppm(image_path);
  if (image.dim(1) != ck.height || image.dim(2) != ck.width) {
    throw Error(ErrorCode::ManifestMismatch, "image is " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(1)) +
                                                 ", checkpoint expects " + std::to_string(ck.width) + "x" +
                                                 std::to_string(ck.height));
  }
  const Tensor depth = predict_depth(ck.model, image);
  fs::create_directories(out);
  write_dtn(out / "depth.dtn", depth);
  write_pgm(out / "depth.pgm", disparity_visualization(depth));
  std::cout << "wrote depth.dtn and depth.pgm to " << out.string() << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& scene_dir, const fs::path& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Sequence seq = Sequence::from_directory(read_scene_directory(scene_dir));
  if (seq.intrinsics.width != ck.width || seq.intrinsics.height != ck.height) {
    throw Error(ErrorCode::ManifestMismatch, "scene extents differ from the checkpoint");
  }
  const DepthEvaluation ev = evaluate_depth(ck.model, seq, cfg.eval);
  fs::create_directories(out);
  write_metrics_csv(out / "metrics.csv", ev);
  std::cout << kMetricsCsvHeader << '\n' << to_csv_row(ev.mean) << '\n';
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& opt) {
  const auto results = run_gradcheck(opt);
  bool ok = !results.empty();
  std::printf("%-28s %6s %7s %7s %12s %12s %10s  %s\n", "op", "seeds", "probes", "refined", "max_abs_err",
              "max_rel_err", "tol_ratio", "result");
  for (const GradcheckResult& r : results) {
    std::printf("%-28s %6d %7lld %7lld %12.3e %12.3e %10.3e  %s\n", r.name.c_str(), r.seeds,
                static_cast<long long>(r.probes), static_cast<long long>(r.refined), r.max_abs_error, r.max_rel_error,
                r.worst_ratio, r.passed ? "pass" : "FAIL");
    ok = ok && r.passed;
  }
  std::printf("%s\n", ok ? "all gradients within tolerance" : "gradient check failed");
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised monocular depth and pose on synthetic scenes"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, image, scene_dir, out_dir;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen", "Render a synthetic scene directory");
  auto* train_cmd = app.add_subcommand("train", "Train depth and pose networks");
  auto* infer = app.add_subcommand("infer", "Predict depth for one image");
  auto* eval = app.add_subcommand("eval", "Median-scaled depth metrics on a scene directory");
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient audit");

  for (auto* sub : {gen, train_cmd, eval}) sub->add_option("--config", config_path, "Run config JSON")->check(CLI::ExistingFile);
  for (auto* sub : {gen, train_cmd, eval, grad}) sub->add_option("--seed", seed, "Overrides the config seed");
  gen->add_option("--out", out_dir, "Scene directory")->required();
  train_cmd->add_option("--out", out_dir, "Run directory (defaults to output_dir of the config)");
  train_cmd->add_option("--scene", scene_dir, "Train on an existing scene directory")->check(CLI::ExistingDirectory);
  infer->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--image", image, "PPM image")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", out_dir, "Output directory")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--scene", scene_dir, "Scene directory with ground truth")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", out_dir, "Output directory")->required();

  GradcheckOptions gopt;
  grad->add_option("--seeds", gopt.seeds, "Random instances per op")->check(CLI::PositiveNumber);
  grad->add_option("--only", gopt.only, "Restrict to these ops");
  grad->add_option("--corrupt", gopt.corrupt, "Corrupt one op's analytic gradient (harness self-test)")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (grad->parsed()) {
      if (seed) gopt.seed = *seed;
      return cmd_gradcheck(gopt);
    }
    if (infer->parsed()) return cmd_infer(checkpoint, image, out_dir);
    const RunConfig cfg = resolve_config(config_path, seed);
    if (gen->parsed()) return cmd_gen(cfg, out_dir);
    if (train_cmd->parsed()) return cmd_train(cfg, out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(out_dir), scene_dir);
    if (eval->parsed()) return cmd_eval(cfg, checkpoint, scene_dir, out_dir);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return numerical(e.code()) ? kExitNumeric : kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
