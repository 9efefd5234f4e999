#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "posedepth/tensor.hpp"

namespace posedepth {

struct MetricsReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double a1 = 0.0;
  double a2 = 0.0;
  double a3 = 0.0;
};

struct MedianScaled {
  Tensor scaled;
  double ratio = 1.0;
};

/// Median of the masked values; even counts average the two central values.
double masked_median(const Buffer& values, const Buffer& mask);

/// Rescales `pred` by median(gt[mask]) / median(pred[mask]). `mask` is
/// nonzero where a pixel takes part.
MedianScaled median_scale(const Tensor& pred, const Tensor& gt, const Tensor& mask);

/// Standard depth errors over pixels whose ground truth lies within
/// [d_min_eval, d_max_eval]; predictions are clamped to the same range.
MetricsReport compute_metrics(const Tensor& pred, const Tensor& gt, double d_min_eval, double d_max_eval);

/// Mask of ground-truth pixels inside the evaluation range.
Tensor evaluation_mask(const Tensor& gt, double d_min_eval, double d_max_eval);

/// Field-wise mean of several reports.
MetricsReport mean_report(const std::vector<MetricsReport>& reports);

inline constexpr const char* kMetricsCsvHeader = "abs_rel,sq_rel,rmse,rmse_log,a1,a2,a3";

/// One CSV row in header order, printed with full round-trip precision.
std::string to_csv_row(const MetricsReport& r);

}  // namespace posedepth
