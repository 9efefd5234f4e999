#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "posedepth/tensor.hpp"

namespace posedepth {

/// Inputs of one gradient-check instance. Only `wrt` is perturbed; `fixed`
/// carries masks, configs encoded as tensors and other constants.
struct GradcheckInputs {
  std::vector<Tensor> wrt;
  std::vector<Tensor> fixed;
};

struct GradcheckCase {
  std::string name;
  std::function<GradcheckInputs(std::mt19937_64&)> make_inputs;
  std::function<Tensor(const std::vector<Tensor>& wrt, const std::vector<Tensor>& fixed)> forward;
};

/// Every differentiable operation of the library plus the end-to-end
/// training objective, each registered once.
const std::vector<GradcheckCase>& gradcheck_registry();

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int seeds = 10;
  double atol = 1e-6;
  double rtol = 1e-4;
  double step = 1e-6;
  Index max_probes = 24;  ///< perturbed coordinates per instance
  /// Names to run; empty runs the whole registry.
  std::vector<std::string> only;
  /// Test hook: the analytic gradient of this case is deliberately corrupted.
  std::string corrupt;
};

struct GradcheckResult {
  std::string name;
  int seeds = 0;
  Index probes = 0;
  Index refined = 0;  ///< probes re-estimated with a finer step near a kink
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;  ///< |analytic - numeric| / max(|numeric|, atol)
  double worst_ratio = 0.0;    ///< largest |analytic - numeric| / (atol + rtol |numeric|)
  bool passed = true;
};

/// Central differences against the tape gradient of sum(r * f(x)) for a
/// random projection r, over `seeds` random instances.
GradcheckResult run_gradcheck_case(const GradcheckCase& c, const GradcheckOptions& opt);

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt);

/// Draws from [lo, hi) with 53 random bits.
double uniform(std::mt19937_64& rng, double lo, double hi);

}  // namespace posedepth
