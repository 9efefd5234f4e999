#pragma once

#include <vector>

#include "posedepth/tensor.hpp"

namespace posedepth {

struct LossConfig {
  double alpha = 0.85;      ///< SSIM share of the photometric error
  double lambda_s = 1e-3;   ///< smoothness weight
  Index ssim_window = 3;
  double ssim_c1 = 0.01 * 0.01;
  double ssim_c2 = 0.03 * 0.03;
  bool automask_enabled = true;

  void validate() const;
};

struct LossBreakdown {
  Tensor total;
  Tensor photometric;
  Tensor smoothness;
  double mask_coverage = 0.0;
};

/// Per-channel SSIM map with box-filtered local statistics (reflect padding),
/// clamped to [-1, 1].
Tensor ssim(const Tensor& a, const Tensor& b, const LossConfig& cfg);

/// alpha / 2 * (1 - SSIM) + (1 - alpha) * |a - b|, each averaged over
/// channels. Returns H x W.
Tensor photometric_error(const Tensor& a, const Tensor& b, const LossConfig& cfg);

struct WarpedSource {
  Tensor image;  ///< C x H x W, the source warped into the target view
  Tensor valid;  ///< H x W of {0, 1}
};

struct ReprojectionLoss {
  Tensor loss;          ///< scalar masked mean of the per-pixel minimum
  Tensor per_pixel;     ///< H x W minimum over sources
  Tensor automask;      ///< H x W of {0, 1}; constant
  Tensor valid;         ///< H x W, pixels valid for at least one source
  double mask_coverage = 0.0;
};

/// Per-pixel minimum photometric error over the warped sources, masked by the
/// auto-mask (warped error strictly below the unwarped error of the
/// unmoved source frames) and by projection validity. `identity_frames` are
/// the raw source frames; pass an empty list to disable the auto-mask.
ReprojectionLoss min_reprojection_loss(const Tensor& target, const std::vector<WarpedSource>& warped,
                                       const std::vector<Tensor>& identity_frames, const LossConfig& cfg);

/// Edge-aware smoothness of the mean-normalized disparity of `depth`,
/// weighted by exp(-|image gradient|).
Tensor smoothness_loss(const Tensor& depth, const Tensor& image);

/// L = masked photometric + lambda_s * smoothness.
LossBreakdown total_loss(const ReprojectionLoss& photometric, const Tensor& smoothness, const LossConfig& cfg);

}  // namespace posedepth
