#pragma once

// Closed-set metrics, calibration, accuracy-rejection and ROC curves, with
// CSV / JSON emitters for each.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include <json.hpp>

#include "flowuq/num_core.hpp"
#include "flowuq/serialize.hpp"

namespace flowuq {

struct ClassificationMetrics {
  double accuracy = 0.0;
  double f1_macro = 0.0;
  double f1_weighted = 0.0;
  std::vector<double> f1_per_class;
  std::vector<std::size_t> support;
};

inline ClassificationMetrics classification_metrics(std::span<const int> predicted, std::span<const int> truth,
                                                    std::size_t num_classes) {
  if (predicted.size() != truth.size()) throw DimensionMismatch("metrics: predicted and truth lengths differ");
  if (truth.empty()) throw EmptyDataset("metrics: no samples");
  const auto check = [&](int y) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw InvalidInput("metrics: label out of range");
  };
  std::vector<std::size_t> tp(num_classes, 0), pred_count(num_classes, 0), true_count(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    check(predicted[i]);
    check(truth[i]);
    const auto p = static_cast<std::size_t>(predicted[i]), t = static_cast<std::size_t>(truth[i]);
    ++pred_count[p];
    ++true_count[t];
    if (p == t) {
      ++tp[t];
      ++correct;
    }
  }
  ClassificationMetrics m;
  const double n = static_cast<double>(truth.size());
  m.accuracy = static_cast<double>(correct) / n;
  m.f1_per_class.assign(num_classes, 0.0);
  m.support = true_count;
  std::size_t present = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (pred_count[k] == 0 && true_count[k] == 0) continue;
    ++present;
    // F1 = 2 TP / (2 TP + FP + FN) = 2 TP / (predicted + actual)
    const double f1 = 2.0 * static_cast<double>(tp[k]) / static_cast<double>(pred_count[k] + true_count[k]);
    m.f1_per_class[k] = f1;
    m.f1_macro += f1;
    m.f1_weighted += f1 * static_cast<double>(true_count[k]) / n;
  }
  m.f1_macro /= static_cast<double>(present);
  return m;
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationBin {
  double lower = 0.0, upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double ece = 0.0;
  double mce = 0.0;
};

/// Bin i (0-based) covers (i/M, (i+1)/M]; a confidence of exactly 0 goes to
/// the first bin.
inline std::size_t calibration_bin(double confidence, std::size_t num_bins) {
  const double m = static_cast<double>(num_bins);
  if (!(confidence > 0.0)) return 0;
  auto b = static_cast<std::size_t>(std::clamp(std::ceil(confidence * m) - 1.0, 0.0, m - 1.0));
  while (b > 0 && confidence <= static_cast<double>(b) / m) --b;
  while (b + 1 < num_bins && confidence > static_cast<double>(b + 1) / m) ++b;
  return b;
}

/// Confidence is the largest entry of each probability row.
inline CalibrationReport calibration(const Matrix& probs, std::span<const int> truth, std::size_t num_bins = 10) {
  if (probs.rows() != truth.size()) throw DimensionMismatch("calibration: probs rows != labels");
  if (truth.empty()) throw EmptyDataset("calibration: no samples");
  if (num_bins == 0) throw InvalidInput("calibration: need at least one bin");
  CalibrationReport r;
  r.bins.resize(num_bins);
  std::vector<double> conf_sum(num_bins, 0.0);
  std::vector<std::size_t> hits(num_bins, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto row = probs.row(i);
    check_prob_vector(row);
    const std::size_t pred = argmax(row);
    const double c = row[pred];
    const std::size_t b = calibration_bin(c, num_bins);
    ++r.bins[b].count;
    conf_sum[b] += c;
    hits[b] += static_cast<int>(pred) == truth[i];
  }
  const double n = static_cast<double>(truth.size());
  for (std::size_t b = 0; b < num_bins; ++b) {
    auto& bin = r.bins[b];
    bin.lower = static_cast<double>(b) / static_cast<double>(num_bins);
    bin.upper = static_cast<double>(b + 1) / static_cast<double>(num_bins);
    if (bin.count == 0) continue;
    const double cnt = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / cnt;
    bin.accuracy = static_cast<double>(hits[b]) / cnt;
    const double gap = std::abs(bin.accuracy - bin.mean_confidence);
    r.ece += cnt / n * gap;
    r.mce = std::max(r.mce, gap);
  }
  return r;
}

// ---------------------------------------------------------------------------
// ROC

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;   // scores >= threshold are flagged; +inf for (0,0)
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auroc = 0.0;
  double auroc20 = 0.0;
};

/// Area under the piecewise-linear curve over fpr in [0, limit], divided by
/// `limit`. Widths are scaled before multiplying so a diagonal gives exactly
/// limit / 2.
inline double partial_area(const std::vector<RocPoint>& pts, double limit) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double x0 = pts[i - 1].fpr, x1 = pts[i].fpr;
    const double y0 = pts[i - 1].tpr, y1 = pts[i].tpr;
    if (x0 >= limit) break;
    if (x1 <= limit) {
      area += 0.5 * ((x1 - x0) / limit) * (y0 + y1);
    } else {
      const double y = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
      area += 0.5 * ((limit - x0) / limit) * (y0 + y);
    }
  }
  return area;
}

/// Unknown (OoD) samples are the positives. One curve point per distinct
/// score, so tied scores produce a diagonal segment.
inline RocCurve roc(std::span<const double> scores_id, std::span<const double> scores_ood) {
  if (scores_id.empty() || scores_ood.empty()) throw EmptyDataset("roc: both score sets must be non-empty");
  require_finite(scores_id, "roc");
  require_finite(scores_ood, "roc");
  std::vector<std::pair<double, bool>> all;
  all.reserve(scores_id.size() + scores_ood.size());
  for (double s : scores_id) all.emplace_back(s, false);
  for (double s : scores_ood) all.emplace_back(s, true);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const double n_neg = static_cast<double>(scores_id.size()), n_pos = static_cast<double>(scores_ood.size());
  RocCurve c;
  c.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double s = all[i].first;
    while (i < all.size() && all[i].first == s) {
      (all[i].second ? tp : fp) += 1;
      ++i;
    }
    c.points.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos, s});
  }
  c.auroc = partial_area(c.points, 1.0);
  c.auroc20 = partial_area(c.points, 0.2);
  return c;
}

// ---------------------------------------------------------------------------
// Accuracy-rejection

struct RejectionPoint {
  double rejection = 0.0;
  double accuracy = 0.0;   // NaN when nothing is retained
  std::size_t retained = 0;
};

struct RejectionCurve {
  std::vector<RejectionPoint> points;
};

/// Rejection grid 0, 0.05, ..., 0.95. At fraction p = k/20 the ceil(p n)
/// most uncertain samples are dropped; among equal uncertainties the one
/// with the larger original index is dropped first.
inline RejectionCurve accuracy_rejection(std::span<const double> uncertainty, std::span<const int> predicted,
                                         std::span<const int> truth) {
  if (uncertainty.size() != predicted.size() || predicted.size() != truth.size())
    throw DimensionMismatch("rejection: lengths differ");
  require_finite(uncertainty, "rejection");
  const std::size_t n = truth.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return uncertainty[a] < uncertainty[b]; });
  // prefix[r] = correct predictions among the r most certain samples
  std::vector<std::size_t> prefix(n + 1, 0);
  for (std::size_t r = 0; r < n; ++r) prefix[r + 1] = prefix[r] + (predicted[order[r]] == truth[order[r]]);
  RejectionCurve curve;
  for (std::size_t k = 0; k < 20; ++k) {
    const std::size_t dropped = (k * n + 19) / 20;
    const std::size_t kept = n - dropped;
    RejectionPoint p;
    p.rejection = static_cast<double>(k) / 20.0;
    p.retained = kept;
    p.accuracy = kept == 0 ? std::numeric_limits<double>::quiet_NaN()
                           : static_cast<double>(prefix[kept]) / static_cast<double>(kept);
    curve.points.push_back(p);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Emitters

inline void write_roc_csv(std::ostream& os, const RocCurve& c) {
  os << "fpr,tpr,threshold\n";
  for (const auto& p : c.points) os << format_double(p.fpr) << ',' << format_double(p.tpr) << ',' << format_double(p.threshold) << '\n';
}

inline void write_rejection_csv(std::ostream& os, const RejectionCurve& c) {
  os << "rejection,accuracy,retained\n";
  for (const auto& p : c.points) os << format_double(p.rejection) << ',' << format_double(p.accuracy) << ',' << p.retained << '\n';
}

inline void write_calibration_csv(std::ostream& os, const CalibrationReport& r) {
  os << "bin,lower,upper,count,mean_confidence,accuracy\n";
  for (std::size_t b = 0; b < r.bins.size(); ++b) {
    const auto& x = r.bins[b];
    os << b + 1 << ',' << format_double(x.lower) << ',' << format_double(x.upper) << ',' << x.count << ','
       << format_double(x.mean_confidence) << ',' << format_double(x.accuracy) << '\n';
  }
}

inline nlohmann::json to_json(const ClassificationMetrics& m) {
  return {{"accuracy", m.accuracy}, {"f1_macro", m.f1_macro}, {"f1_weighted", m.f1_weighted},
          {"f1_per_class", m.f1_per_class}, {"support", m.support}};
}

inline nlohmann::json to_json(const CalibrationReport& r) { return {{"ece", r.ece}, {"mce", r.mce}}; }

inline nlohmann::json to_json(const RocCurve& c) { return {{"auroc", c.auroc}, {"auroc20", c.auroc20}}; }

}  // namespace flowuq
