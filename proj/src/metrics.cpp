#include "posedepth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

namespace posedepth {

double masked_median(const Buffer& values, const Buffer& mask) {
  std::vector<double> picked;
  for (Index i = 0; i < values.size(); ++i) {
    if (mask[i] != 0.0) picked.push_back(values[i]);
  }
  if (picked.empty()) throw Error(ErrorCode::EmptyMask, "median of an empty selection");
  const std::size_t n = picked.size(), mid = n / 2;
  std::nth_element(picked.begin(), picked.begin() + static_cast<std::ptrdiff_t>(mid), picked.end());
  const double upper = picked[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(picked.begin(), picked.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

MedianScaled median_scale(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  if (pred.shape() != gt.shape() || mask.shape() != gt.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "median_scale extents differ");
  }
  if (!((mask.data() != 0.0).any())) throw Error(ErrorCode::EmptyMask, "median_scale mask selects no pixel");
  for (Index i = 0; i < pred.numel(); ++i) {
    if (mask[i] != 0.0 && !(pred[i] > 0.0)) {
      throw Error(ErrorCode::NonPositivePrediction, "prediction is not positive at pixel " + std::to_string(i));
    }
  }
  MedianScaled out;
  out.ratio = masked_median(gt.data(), mask.data()) / masked_median(pred.data(), mask.data());
  out.scaled = Tensor(pred.shape(), pred.data() * out.ratio);
  return out;
}

Tensor evaluation_mask(const Tensor& gt, double d_min_eval, double d_max_eval) {
  return Tensor(gt.shape(), ((gt.data() >= d_min_eval) && (gt.data() <= d_max_eval)).cast<double>());
}

MetricsReport compute_metrics(const Tensor& pred, const Tensor& gt, double d_min_eval, double d_max_eval) {
  if (pred.shape() != gt.shape()) throw Error(ErrorCode::ShapeMismatch, "compute_metrics extents differ");
  if (!(d_min_eval > 0.0) || !(d_max_eval > d_min_eval)) {
    throw Error(ErrorCode::InvalidArgument, "need 0 < d_min_eval < d_max_eval");
  }
  const Buffer mask = evaluation_mask(gt, d_min_eval, d_max_eval).data();
  const double count = mask.sum();
  if (count == 0.0) throw Error(ErrorCode::EmptyEvaluationMask, "no ground-truth pixel inside the evaluation range");

  // Masked-out entries are replaced by 1 so every expression stays finite.
  const Buffer g = (mask != 0.0).select(gt.data(), 1.0);
  const Buffer p = (mask != 0.0).select(pred.data().max(d_min_eval).min(d_max_eval), 1.0);
  const Buffer diff = p - g;
  const Buffer log_diff = p.log() - g.log();
  const Buffer ratio = (p / g).max(g / p);

  MetricsReport r;
  r.abs_rel = (mask * diff.abs() / g).sum() / count;
  r.sq_rel = (mask * diff.square() / g).sum() / count;
  r.rmse = std::sqrt((mask * diff.square()).sum() / count);
  r.rmse_log = std::sqrt((mask * log_diff.square()).sum() / count);
  r.a1 = (mask * (ratio < 1.25).cast<double>()).sum() / count;
  r.a2 = (mask * (ratio < 1.25 * 1.25).cast<double>()).sum() / count;
  r.a3 = (mask * (ratio < 1.25 * 1.25 * 1.25).cast<double>()).sum() / count;
  return r;
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports) {
  MetricsReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.abs_rel += r.abs_rel;
    m.sq_rel += r.sq_rel;
    m.rmse += r.rmse;
    m.rmse_log += r.rmse_log;
    m.a1 += r.a1;
    m.a2 += r.a2;
    m.a3 += r.a3;
  }
  const double n = static_cast<double>(reports.size());
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse /= n;
  m.rmse_log /= n;
  m.a1 /= n;
  m.a2 /= n;
  m.a3 /= n;
  return m;
}

std::string to_csv_row(const MetricsReport& r) {
  char line[256];
  std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.abs_rel, r.sq_rel, r.rmse,
                r.rmse_log, r.a1, r.a2, r.a3);
  return line;
}

}  // namespace posedepth
