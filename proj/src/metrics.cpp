#include "esdmr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace esdmr {

namespace {

void require_binary(const char* op, const Tensor& t) {
  const float* p = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (p[i] != 0.0f && p[i] != 1.0f) {
      throw std::invalid_argument(std::string(op) +
                                  ": input map must be binary {0,1}");
    }
  }
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
}

}  // namespace

Confusion confusion(const Tensor& pred_binary, const Tensor& ref_binary) {
  require_same("confusion", pred_binary, ref_binary);
  require_binary("confusion", pred_binary);
  require_binary("confusion", ref_binary);
  Confusion c;
  const float* p = pred_binary.data();
  const float* r = ref_binary.data();
  for (std::size_t i = 0; i < pred_binary.numel(); ++i) {
    const bool pi = p[i] == 1.0f;
    const bool ri = r[i] == 1.0f;
    if (pi && ri) {
      ++c.tp;
    } else if (!pi && !ri) {
      ++c.tn;
    } else if (pi) {
      ++c.fp;
    } else {
      ++c.fn;
    }
  }
  return c;
}

BasicMetrics basic_metrics(const Confusion& c) {
  BasicMetrics m;
  const double tp = static_cast<double>(c.tp);
  const double tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn);

  if (c.tp + c.fn == 0) {
    m.se = 1.0;  // vacuous recall: nothing to find
    m.se_degenerate = true;
  } else {
    m.se = tp / (tp + fn);
  }
  if (c.tn + c.fp == 0) {
    m.sp = 1.0;
    m.sp_degenerate = true;
  } else {
    m.sp = tn / (tn + fp);
  }
  m.acc = (tp + tn) / (tp + tn + fp + fn);
  if (c.tp + c.fp + c.fn == 0) {
    m.f1 = 1.0;  // empty prediction and empty reference agree
    m.jaccard = 1.0;
    m.f1_degenerate = true;
  } else {
    m.f1 = 2.0 * tp / (2.0 * tp + fp + fn);
    m.jaccard = tp / (tp + fp + fn);
  }
  return m;
}

double auc(const Tensor& pred_probs, const Tensor& ref_binary,
           bool* degenerate) {
  require_same("auc", pred_probs, ref_binary);
  require_binary("auc", ref_binary);
  if (degenerate) *degenerate = false;

  const float* r = ref_binary.data();
  const float* p = pred_probs.data();
  const std::size_t n = pred_probs.numel();
  long long pos = 0;
  for (std::size_t i = 0; i < n; ++i) pos += r[i] == 1.0f ? 1 : 0;
  const long long neg = static_cast<long long>(n) - pos;
  if (pos == 0 || neg == 0) {
    if (degenerate) *degenerate = true;
    return 0.5;
  }

  // Sort pixels by score descending; walking thresholds from high to low
  // turns the per-threshold counts into running sums.
  std::vector<std::pair<float, bool>> scored(n);
  for (std::size_t i = 0; i < n; ++i) scored[i] = {p[i], r[i] == 1.0f};
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<std::pair<double, double>> points;  // (fpr, tpr)
  points.reserve(258);
  points.push_back({0.0, 0.0});
  std::size_t idx = 0;
  long long tp = 0, fp = 0;
  for (int k = 255; k >= 0; --k) {
    const double t = static_cast<double>(k) / 255.0;
    while (idx < n && static_cast<double>(scored[idx].first) >= t) {
      if (scored[idx].second) {
        ++tp;
      } else {
        ++fp;
      }
      ++idx;
    }
    points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                      static_cast<double>(tp) / static_cast<double>(pos)});
  }
  points.push_back({1.0, 1.0});
  std::sort(points.begin(), points.end());

  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const double dx = points[i].first - points[i - 1].first;
    area += dx * 0.5 * (points[i].second + points[i - 1].second);
  }
  return area;
}

namespace {

// Weighted confusion sums; the uniform map reproduces the plain counts
// exactly (sums of small integers stay exact in doubles).
struct WeightedCounts {
  double tp = 0, fp = 0, fn = 0;
  double pred_sum = 0, ref_sum = 0;
};

WeightedCounts weighted_counts(const Tensor& pred, const Tensor& ref,
                               const std::vector<double>& omega) {
  WeightedCounts c;
  const float* p = pred.data();
  const float* r = ref.data();
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double w = omega[i];
    const double pi = p[i];
    const double ri = r[i];
    c.tp += w * pi * ri;
    c.fp += w * pi * (1.0 - ri);
    c.fn += w * (1.0 - pi) * ri;
    c.pred_sum += w * pi;
    c.ref_sum += w * ri;
  }
  return c;
}

std::vector<double> gaussian_omega(const Tensor& ref) {
  if (ref.ndim() != 2) {
    throw std::invalid_argument(
        "weighted_fscore: Gaussian weighting needs a 2-d (H,W) map");
  }
  const int h = ref.extent(0), w = ref.extent(1);
  // 7x7 kernel, sigma 5, normalized to unit sum.
  double kernel[7][7];
  double ksum = 0;
  for (int dy = -3; dy <= 3; ++dy) {
    for (int dx = -3; dx <= 3; ++dx) {
      const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * 25.0));
      kernel[dy + 3][dx + 3] = v;
      ksum += v;
    }
  }
  for (auto& row : kernel) {
    for (double& v : row) v /= ksum;
  }
  std::vector<double> omega(static_cast<std::size_t>(h) * w, 0.0);
  const float* r = ref.data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int dy = -3; dy <= 3; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -3; dx <= 3; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          acc += kernel[dy + 3][dx + 3] *
                 static_cast<double>(r[static_cast<std::size_t>(yy) * w + xx]);
        }
      }
      omega[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return omega;
}

}  // namespace

double weighted_fscore(const Tensor& pred_binary, const Tensor& ref_binary,
                       double beta, FbwWeighting weighting, bool* degenerate) {
  require_same("weighted_fscore", pred_binary, ref_binary);
  require_binary("weighted_fscore", pred_binary);
  require_binary("weighted_fscore", ref_binary);
  if (degenerate) *degenerate = false;

  std::vector<double> omega;
  if (weighting == FbwWeighting::kUniform) {
    omega.assign(pred_binary.numel(), 1.0);
  } else {
    omega = gaussian_omega(ref_binary);
  }
  const WeightedCounts c = weighted_counts(pred_binary, ref_binary, omega);

  if (c.pred_sum == 0.0 && c.ref_sum == 0.0) {
    if (degenerate) *degenerate = true;
    return 1.0;  // agreement on absence, consistent with F1's convention
  }
  // Count form of (1+b^2) P R / (b^2 P + R); with uniform weights and
  // beta = 1 this expression is bit-identical to F1.
  const double b2 = beta * beta;
  const double denom = (1.0 + b2) * c.tp + b2 * c.fn + c.fp;
  if (denom == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return (1.0 + b2) * c.tp / denom;
}

double mae(const Tensor& pred, const Tensor& ref) {
  require_same("mae", pred, ref);
  double acc = 0;
  const float* p = pred.data();
  const float* r = ref.data();
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    acc += std::abs(static_cast<double>(p[i]) - static_cast<double>(r[i]));
  }
  return acc / static_cast<double>(pred.numel());
}

namespace {

double enhanced_alignment(const std::vector<char>& bin, const Tensor& ref) {
  const float* r = ref.data();
  const std::size_t n = ref.numel();
  long long ref_fg = 0;
  for (std::size_t i = 0; i < n; ++i) ref_fg += r[i] == 1.0f ? 1 : 0;

  if (ref_fg == 0 || ref_fg == static_cast<long long>(n)) {
    // Constant reference: centered maps vanish, so follow the cited
    // convention and score the fraction of matching pixels.
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double b = bin[i] ? 1.0 : 0.0;
      acc += ref_fg == 0 ? 1.0 - b : b;
    }
    return acc / static_cast<double>(n);
  }

  double mean_b = 0;
  for (std::size_t i = 0; i < n; ++i) mean_b += bin[i] ? 1.0 : 0.0;
  mean_b /= static_cast<double>(n);
  const double mean_r = static_cast<double>(ref_fg) / static_cast<double>(n);

  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pb = (bin[i] ? 1.0 : 0.0) - mean_b;
    const double pr = static_cast<double>(r[i]) - mean_r;
    const double den = pb * pb + pr * pr;
    const double align = den == 0.0 ? 0.0 : 2.0 * pb * pr / den;
    const double enhanced = 0.25 * (1.0 + align) * (1.0 + align);
    acc += enhanced;
  }
  return acc / static_cast<double>(n);
}

}  // namespace

double e_phi_max(const Tensor& pred_probs, const Tensor& ref_binary) {
  require_same("e_phi_max", pred_probs, ref_binary);
  require_binary("e_phi_max", ref_binary);
  const float* p = pred_probs.data();
  const std::size_t n = pred_probs.numel();
  std::vector<char> bin(n);
  double best = 0.0;
  for (int k = 0; k < 256; ++k) {
    const double t = static_cast<double>(k) / 255.0;
    for (std::size_t i = 0; i < n; ++i) {
      bin[i] = static_cast<double>(p[i]) >= t ? 1 : 0;
    }
    best = std::max(best, enhanced_alignment(bin, ref_binary));
  }
  return best;
}

namespace {

struct RegionStats {
  double mean_p = 0, mean_r = 0, var_p = 0, var_r = 0, cov = 0;
  long long count = 0;
};

RegionStats region_stats(const Tensor& pred, const Tensor& ref, int y0, int y1,
                         int x0, int x1) {
  RegionStats s;
  const int w = pred.extent(1);
  const float* p = pred.data();
  const float* r = ref.data();
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      s.mean_p += p[i];
      s.mean_r += r[i];
      ++s.count;
    }
  }
  if (s.count == 0) return s;
  s.mean_p /= static_cast<double>(s.count);
  s.mean_r /= static_cast<double>(s.count);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double dp = p[i] - s.mean_p;
      const double dr = r[i] - s.mean_r;
      s.var_p += dp * dp;
      s.var_r += dr * dr;
      s.cov += dp * dr;
    }
  }
  s.var_p /= static_cast<double>(s.count);
  s.var_r /= static_cast<double>(s.count);
  s.cov /= static_cast<double>(s.count);
  return s;
}

double region_ssim(const RegionStats& s) {
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const double num = (2.0 * s.mean_p * s.mean_r + c1) * (2.0 * s.cov + c2);
  const double den = (s.mean_p * s.mean_p + s.mean_r * s.mean_r + c1) *
                     (s.var_p + s.var_r + c2);
  return num / den;
}

// Object-level similarity of one region: 2*mean / (mean^2 + 1 + std).
double object_score(const Tensor& values, const Tensor& mask, bool fg) {
  const float* v = values.data();
  const float* m = mask.data();
  const std::size_t n = values.numel();
  double mean = 0;
  long long count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool in = (m[i] == 1.0f) == fg;
    if (!in) continue;
    mean += fg ? v[i] : 1.0 - v[i];
    ++count;
  }
  if (count == 0) return 0.0;
  mean /= static_cast<double>(count);
  double var = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool in = (m[i] == 1.0f) == fg;
    if (!in) continue;
    const double x = fg ? v[i] : 1.0 - v[i];
    var += (x - mean) * (x - mean);
  }
  const double sd =
      count > 1 ? std::sqrt(var / static_cast<double>(count - 1)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + sd);
}

}  // namespace

double s_alpha(const Tensor& pred_probs, const Tensor& ref_binary,
               double alpha) {
  require_same("s_alpha", pred_probs, ref_binary);
  require_binary("s_alpha", ref_binary);
  if (pred_probs.ndim() != 2) {
    throw std::invalid_argument("s_alpha: needs a 2-d (H,W) map, got " +
                                shape_to_string(pred_probs.shape()));
  }
  const int h = pred_probs.extent(0), w = pred_probs.extent(1);
  const float* r = ref_binary.data();

  // Object term, weighted by the reference foreground ratio.
  long long fg_count = 0;
  for (std::size_t i = 0; i < ref_binary.numel(); ++i) {
    fg_count += r[i] == 1.0f ? 1 : 0;
  }
  const double mu =
      static_cast<double>(fg_count) / static_cast<double>(ref_binary.numel());
  const double o_fg = object_score(pred_probs, ref_binary, true);
  const double o_bg = object_score(pred_probs, ref_binary, false);
  const double s_o = mu * o_fg + (1.0 - mu) * o_bg;

  // Region term: quadrants at the reference centroid (image center when the
  // reference is empty), area-weighted SSIM.
  int cy = h / 2, cx = w / 2;
  if (fg_count > 0) {
    double sy = 0, sx = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (r[static_cast<std::size_t>(y) * w + x] == 1.0f) {
          sy += y;
          sx += x;
        }
      }
    }
    cy = static_cast<int>(std::lround(sy / static_cast<double>(fg_count)));
    cx = static_cast<int>(std::lround(sx / static_cast<double>(fg_count)));
    cy = std::clamp(cy, 0, h - 1);
    cx = std::clamp(cx, 0, w - 1);
  }
  const int splits_y[3] = {0, cy + 1, h};
  const int splits_x[3] = {0, cx + 1, w};
  double s_r = 0;
  for (int qy = 0; qy < 2; ++qy) {
    for (int qx = 0; qx < 2; ++qx) {
      const RegionStats st = region_stats(pred_probs, ref_binary,
                                          splits_y[qy], splits_y[qy + 1],
                                          splits_x[qx], splits_x[qx + 1]);
      if (st.count == 0) continue;
      const double weight = static_cast<double>(st.count) /
                            static_cast<double>(pred_probs.numel());
      s_r += weight * region_ssim(st);
    }
  }

  const double s = alpha * s_o + (1.0 - alpha) * s_r;
  return std::clamp(s, 0.0, 1.0);
}

MetricsReport compute_report(const Tensor& pred_probs,
                             const Tensor& ref_binary, double threshold) {
  require_same("compute_report", pred_probs, ref_binary);
  Tensor pred_bin(pred_probs.shape());
  const float* p = pred_probs.data();
  float* b = pred_bin.data();
  for (std::size_t i = 0; i < pred_probs.numel(); ++i) {
    b[i] = static_cast<double>(p[i]) > threshold ? 1.0f : 0.0f;
  }

  MetricsReport rep;
  const Confusion c = confusion(pred_bin, ref_binary);
  const BasicMetrics bm = basic_metrics(c);
  rep.se = bm.se;
  rep.sp = bm.sp;
  rep.acc = bm.acc;
  rep.f1 = bm.f1;
  rep.jaccard = bm.jaccard;
  rep.se_degenerate = bm.se_degenerate;
  rep.sp_degenerate = bm.sp_degenerate;
  rep.f1_degenerate = bm.f1_degenerate;
  rep.auc = auc(pred_probs, ref_binary, &rep.auc_degenerate);
  rep.fbw = weighted_fscore(pred_bin, ref_binary, 1.0, FbwWeighting::kUniform,
                            &rep.fbw_degenerate);
  rep.mae = mae(pred_bin, ref_binary);
  rep.e_phi_max = e_phi_max(pred_probs, ref_binary);
  rep.s_alpha = s_alpha(pred_probs, ref_binary, 0.5);
  return rep;
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) {
    throw std::invalid_argument("mean_report: empty report list");
  }
  MetricsReport m;
  for (const MetricsReport& r : reports) {
    m.se += r.se;
    m.sp += r.sp;
    m.acc += r.acc;
    m.f1 += r.f1;
    m.jaccard += r.jaccard;
    m.auc += r.auc;
    m.fbw += r.fbw;
    m.mae += r.mae;
    m.e_phi_max += r.e_phi_max;
    m.s_alpha += r.s_alpha;
    m.se_degenerate |= r.se_degenerate;
    m.sp_degenerate |= r.sp_degenerate;
    m.f1_degenerate |= r.f1_degenerate;
    m.auc_degenerate |= r.auc_degenerate;
    m.fbw_degenerate |= r.fbw_degenerate;
  }
  const double n = static_cast<double>(reports.size());
  m.se /= n;
  m.sp /= n;
  m.acc /= n;
  m.f1 /= n;
  m.jaccard /= n;
  m.auc /= n;
  m.fbw /= n;
  m.mae /= n;
  m.e_phi_max /= n;
  m.s_alpha /= n;
  return m;
}

std::string metrics_csv_row(const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.se,
                r.sp, r.acc, r.f1, r.jaccard, r.auc, r.fbw, r.mae,
                r.e_phi_max, r.s_alpha);
  return std::string(buf);
}

void write_metrics_csv(const std::vector<MetricsReport>& per_image,
                       const MetricsReport& mean, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open metrics CSV for writing: " + path);
  for (const MetricsReport& r : per_image) f << metrics_csv_row(r) << '\n';
  f << metrics_csv_row(mean) << '\n';
  if (!f) throw std::runtime_error("metrics CSV write failed: " + path);
}

}  // namespace esdmr
