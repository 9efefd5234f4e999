#include "posedepth/losses.hpp"

#include <cmath>
#include <iostream>

#include "posedepth/ops.hpp"

namespace posedepth {

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
  if (!(lambda_s >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda_s must be non-negative");
  if (ssim_window < 3 || ssim_window % 2 == 0) throw Error(ErrorCode::InvalidArgument, "ssim_window must be odd and >= 3");
  if (!(ssim_c1 > 0.0) || !(ssim_c2 > 0.0)) throw Error(ErrorCode::InvalidArgument, "SSIM stabilizers must be positive");
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(who) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// Pushes a candidate out of the running for the per-pixel minimum.
constexpr double kExcluded = 1e3;

Tensor exclude_invalid(const Tensor& error, const Tensor& valid) {
  return add(error, Tensor(valid.shape(), (1.0 - valid.data()) * kExcluded));
}

Tensor stack_min(const std::vector<Tensor>& maps) {
  std::vector<Tensor> planes;
  planes.reserve(maps.size());
  for (const Tensor& m : maps) planes.push_back(reshape(m, {1, m.dim(0), m.dim(1)}));
  return min_over_axis(concat(planes, 0), 0);
}

}  // namespace

Tensor ssim(const Tensor& a, const Tensor& b, const LossConfig& cfg) {
  require_same(a, b, "ssim");
  if (a.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "ssim expects CxHxW");
  const Index k = cfg.ssim_window;
  const Tensor mu_a = box_filter(a, k);
  const Tensor mu_b = box_filter(b, k);
  const Tensor mu_ab = mu_a * mu_b;
  const Tensor var_a = box_filter(a * a, k) - mu_a * mu_a;
  const Tensor var_b = box_filter(b * b, k) - mu_b * mu_b;
  const Tensor cov = box_filter(a * b, k) - mu_ab;
  const Tensor num = (mu_ab * 2.0 + cfg.ssim_c1) * (cov * 2.0 + cfg.ssim_c2);
  const Tensor den = (mu_a * mu_a + mu_b * mu_b + cfg.ssim_c1) * (var_a + var_b + cfg.ssim_c2);
  return clamp(num / den, -1.0, 1.0);
}

Tensor photometric_error(const Tensor& a, const Tensor& b, const LossConfig& cfg) {
  require_same(a, b, "photometric_error");
  const Tensor l1 = mean(abs(a - b), {0});
  if (cfg.alpha == 0.0) return l1;
  const Tensor structural = (1.0 - mean(ssim(a, b, cfg), {0})) * (cfg.alpha / 2.0);
  return structural + l1 * (1.0 - cfg.alpha);
}

ReprojectionLoss min_reprojection_loss(const Tensor& target, const std::vector<WarpedSource>& warped,
                                       const std::vector<Tensor>& identity_frames, const LossConfig& cfg) {
  if (warped.empty()) throw Error(ErrorCode::EmptySourceList, "min_reprojection_loss needs at least one source");
  const bool automask = cfg.automask_enabled && !identity_frames.empty();
  if (automask && identity_frames.size() != warped.size()) {
    throw Error(ErrorCode::ShapeMismatch, "one identity frame per warped source is required");
  }
  if (target.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "target must be CxHxW");
  const Shape pixel_shape{target.dim(1), target.dim(2)};

  std::vector<Tensor> candidates, identity;
  Buffer valid_any = Buffer::Zero(numel(pixel_shape));
  for (std::size_t s = 0; s < warped.size(); ++s) {
    require_same(target, warped[s].image, "min_reprojection_loss");
    if (warped[s].valid.shape() != pixel_shape) throw Error(ErrorCode::ShapeMismatch, "valid mask extents");
    candidates.push_back(exclude_invalid(photometric_error(target, warped[s].image, cfg), warped[s].valid));
    valid_any = valid_any.max(warped[s].valid.data());
    if (automask) {
      require_same(target, identity_frames[s], "min_reprojection_loss");
      const Tensor pe = photometric_error(detach(target), detach(identity_frames[s]), cfg);
      identity.push_back(exclude_invalid(pe, warped[s].valid));
    }
  }

  ReprojectionLoss out;
  out.per_pixel = stack_min(candidates);
  Buffer keep = Buffer::Ones(valid_any.size());
  if (automask) keep = (out.per_pixel.data() < stack_min(identity).data()).cast<double>();
  out.automask = Tensor(pixel_shape, keep);
  out.valid = Tensor(pixel_shape, valid_any);

  const Buffer weight = keep * valid_any;
  const double count = weight.sum();
  out.mask_coverage = count / static_cast<double>(weight.size());
  if (count == 0.0) {
    std::cerr << "warning: auto-mask removed every pixel; photometric loss set to 0\n";
    out.loss = sum(out.per_pixel * Tensor(pixel_shape, Buffer::Zero(weight.size())));
  } else {
    out.loss = sum(out.per_pixel * Tensor(pixel_shape, weight)) / count;
  }
  return out;
}

Tensor smoothness_loss(const Tensor& depth, const Tensor& image) {
  if (depth.rank() != 2 || image.rank() != 3 || image.dim(1) != depth.dim(0) || image.dim(2) != depth.dim(1)) {
    throw Error(ErrorCode::ShapeMismatch, "smoothness_loss extents");
  }
  if (!(depth.data() > 0.0).all()) throw Error(ErrorCode::NonPositiveDepth, "smoothness_loss needs positive depth");
  const Index h = depth.dim(0), w = depth.dim(1);
  const Tensor disparity = 1.0 / depth;
  const Tensor normalized = disparity / mean(disparity);

  const Tensor ddx = abs(slice(normalized, 1, 1, w - 1) - slice(normalized, 1, 0, w - 1));
  const Tensor ddy = abs(slice(normalized, 0, 1, h - 1) - slice(normalized, 0, 0, h - 1));
  const Tensor idx = mean(abs(slice(image, 2, 1, w - 1) - slice(image, 2, 0, w - 1)), {0});
  const Tensor idy = mean(abs(slice(image, 1, 1, h - 1) - slice(image, 1, 0, h - 1)), {0});
  return mean(ddx * exp(-idx)) + mean(ddy * exp(-idy));
}

LossBreakdown total_loss(const ReprojectionLoss& photometric, const Tensor& smoothness, const LossConfig& cfg) {
  const double lp = photometric.loss.item(), ls = smoothness.item();
  if (!std::isfinite(lp) || !std::isfinite(ls)) throw Error(ErrorCode::NonFiniteLoss, "loss term is not finite");
  LossBreakdown out;
  out.photometric = photometric.loss;
  out.smoothness = smoothness;
  out.total = photometric.loss + smoothness * cfg.lambda_s;
  out.mask_coverage = photometric.mask_coverage;
  return out;
}

}  // namespace posedepth
