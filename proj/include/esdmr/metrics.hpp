#pragma once

#include <string>
#include <vector>

#include "esdmr/tensor.hpp"

namespace esdmr {

struct Confusion {
  long long tp = 0;
  long long tn = 0;
  long long fp = 0;
  long long fn = 0;

  long long total() const { return tp + tn + fp + fn; }
};

/// Per-pair evaluation outcome. Degenerate flags mark values that come from
/// the documented conventions for vacuous denominators or single-class
/// references rather than from the plain formulas.
struct MetricsReport {
  double se = 0, sp = 0, acc = 0, f1 = 0, jaccard = 0;
  double auc = 0, fbw = 0, mae = 0, e_phi_max = 0, s_alpha = 0;
  bool se_degenerate = false;
  bool sp_degenerate = false;
  bool f1_degenerate = false;
  bool auc_degenerate = false;
  bool fbw_degenerate = false;
};

struct BasicMetrics {
  double se = 0, sp = 0, acc = 0, f1 = 0, jaccard = 0;
  bool se_degenerate = false, sp_degenerate = false, f1_degenerate = false;
};

/// Pixel counts from two binary maps of identical shape.
Confusion confusion(const Tensor& pred_binary, const Tensor& ref_binary);

/// Se = tp/(tp+fn), Sp = tn/(tn+fp), A = (tp+tn)/N, F1 = 2tp/(2tp+fp+fn),
/// J = tp/(tp+fp+fn). Vacuous denominators yield 1 and set a flag.
BasicMetrics basic_metrics(const Confusion& c);

/// Area under the ROC curve from 256 evenly spaced thresholds in [0,1]
/// (binarize at pred >= t) plus the trivial endpoints, by trapezoid.
/// A single-class reference returns 0.5 and sets *degenerate.
double auc(const Tensor& pred_probs, const Tensor& ref_binary,
           bool* degenerate = nullptr);

enum class FbwWeighting {
  kUniform,               // omega == 1; reduces to standard precision/recall
  kGaussianNeighborhood,  // non-canonical: omega = 7x7 sigma=5 blur of ref
};

/// Weighted F score. With uniform weighting and beta = 1 this is exactly F1.
double weighted_fscore(const Tensor& pred_binary, const Tensor& ref_binary,
                       double beta = 1.0,
                       FbwWeighting weighting = FbwWeighting::kUniform,
                       bool* degenerate = nullptr);

double mae(const Tensor& pred, const Tensor& ref);

/// Enhanced-alignment measure, maximized over 256 binarization thresholds.
/// The alignment matrix couples the mean-centered maps and the enhanced map
/// is quarter-square: f(L) = (1+L)^2 / 4. Constant references fall back to
/// the cited formulation's convention (fraction of matching pixels).
double e_phi_max(const Tensor& pred_probs, const Tensor& ref_binary);

/// Structure measure: alpha*S_object + (1-alpha)*S_region. S_object blends
/// foreground/background similarity by the reference foreground ratio;
/// S_region averages per-quadrant SSIM (quadrants split at the reference
/// centroid, area-weighted, SSIM with c1 = 0.01^2 and c2 = 0.03^2). Requires
/// a 2-d (H, W) map.
double s_alpha(const Tensor& pred_probs, const Tensor& ref_binary,
               double alpha = 0.5);

/// Binarizes the probabilities at `threshold` (strictly greater; exact ties
/// stay background) and fills the full report.
MetricsReport compute_report(const Tensor& pred_probs,
                             const Tensor& ref_binary,
                             double threshold = 0.5);

/// Arithmetic mean over per-image reports; flags are OR-ed.
MetricsReport mean_report(const std::vector<MetricsReport>& reports);

/// One CSV row: se,sp,acc,f1,jaccard,auc,fbw,mae,e_phi_max,s_alpha with six
/// decimal places.
std::string metrics_csv_row(const MetricsReport& r);

/// Per-image rows followed by the dataset-mean row. No header, so the line
/// count is image count + 1.
void write_metrics_csv(const std::vector<MetricsReport>& per_image,
                       const MetricsReport& mean, const std::string& path);

}  // namespace esdmr
