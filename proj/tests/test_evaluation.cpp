#include <gtest/gtest.h>

#include <sstream>

#include "flowuq/evaluation.hpp"

using namespace flowuq;

namespace {

// Probability that an OoD score beats an ID score, ties counting half.
double mann_whitney(const std::vector<double>& id, const std::vector<double>& ood) {
  double s = 0;
  for (double o : ood)
    for (double i : id) s += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
  return s / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

// Builds the curve by thresholding at every distinct score and integrates
// the interpolated TPR on a fine grid up to `limit`.
double partial_auc_oracle(const std::vector<double>& id, const std::vector<double>& ood, double limit) {
  std::vector<double> th(id);
  th.insert(th.end(), ood.begin(), ood.end());
  std::sort(th.begin(), th.end(), std::greater<>());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  std::vector<std::pair<double, double>> pts = {{0, 0}};
  for (double t : th) {
    double fp = 0, tp = 0;
    for (double v : id) fp += v >= t;
    for (double v : ood) tp += v >= t;
    pts.emplace_back(fp / id.size(), tp / ood.size());
  }
  auto tpr_at = [&](double x) {
    // leftmost segment reaching x, upper envelope of vertical steps
    for (std::size_t i = 1; i < pts.size(); ++i)
      if (pts[i].first >= x && pts[i].first > pts[i - 1].first) {
        const double f = (x - pts[i - 1].first) / (pts[i].first - pts[i - 1].first);
        return pts[i - 1].second + f * (pts[i].second - pts[i - 1].second);
      }
    return 1.0;
  };
  const int n = 200000;
  double area = 0;
  for (int k = 0; k < n; ++k) area += tpr_at((k + 0.5) * limit / n) * limit / n;
  return area;
}

Matrix rows(const std::vector<std::vector<double>>& r) {
  Matrix m(r.size(), r.front().size());
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r[i].size(); ++j) m(i, j) = r[i][j];
  return m;
}

}  // namespace

TEST(Metrics, HandComputedF1) {
  std::vector<int> truth = {0, 0, 0, 1, 1, 2};
  std::vector<int> pred = {0, 0, 1, 1, 2, 2};
  auto m = classification_metrics(pred, truth, 3);
  EXPECT_NEAR(m.accuracy, 4.0 / 6.0, 1e-15);
  // class 0: tp 2, pred 2, true 3 -> 0.8; class 1: tp 1, pred 2, true 2 -> 0.5; class 2: tp 1, pred 2, true 1 -> 2/3
  EXPECT_NEAR(m.f1_per_class[0], 0.8, 1e-15);
  EXPECT_NEAR(m.f1_per_class[1], 0.5, 1e-15);
  EXPECT_NEAR(m.f1_per_class[2], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.f1_macro, (0.8 + 0.5 + 2.0 / 3.0) / 3.0, 1e-15);
  EXPECT_NEAR(m.f1_weighted, (3 * 0.8 + 2 * 0.5 + 2.0 / 3.0) / 6.0, 1e-15);
  EXPECT_EQ(m.support, (std::vector<std::size_t>{3, 2, 1}));
}

TEST(Metrics, AbsentClassesAreSkippedInMacro) {
  std::vector<int> y = {0, 1, 0, 1};
  auto m = classification_metrics(y, y, 5);
  EXPECT_DOUBLE_EQ(m.f1_macro, 1.0);
  EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
}

TEST(Metrics, Errors) {
  std::vector<int> a = {0, 1}, b = {0};
  EXPECT_THROW(classification_metrics(a, b, 2), DimensionMismatch);
  EXPECT_THROW(classification_metrics(std::vector<int>{}, std::vector<int>{}, 2), EmptyDataset);
  EXPECT_THROW(classification_metrics(std::vector<int>{2}, std::vector<int>{0}, 2), InvalidInput);
}

TEST(Calibration, BinEdgesAreRightClosed) {
  EXPECT_EQ(calibration_bin(0.0, 10), 0u);
  EXPECT_EQ(calibration_bin(0.05, 10), 0u);
  EXPECT_EQ(calibration_bin(0.1, 10), 0u);
  EXPECT_EQ(calibration_bin(std::nextafter(0.1, 1.0), 10), 1u);
  EXPECT_EQ(calibration_bin(0.3, 10), 2u);
  EXPECT_EQ(calibration_bin(0.7, 10), 6u);
  EXPECT_EQ(calibration_bin(1.0, 10), 9u);
  for (int i = 1; i <= 10; ++i) EXPECT_EQ(calibration_bin(i / 10.0, 10), static_cast<std::size_t>(i - 1));
}

TEST(Calibration, HandComputedEce) {
  // confidences 0.9 (correct), 0.9 (wrong), 0.6 (correct), 0.55 (correct)
  Matrix p = rows({{0.9, 0.1}, {0.1, 0.9}, {0.6, 0.4}, {0.45, 0.55}});
  std::vector<int> y = {0, 0, 0, 1};
  auto r = calibration(p, y);
  // bin 9 (0.8, 0.9]: conf 0.9, acc 0.5, gap 0.4, weight 2/4
  // bin 6 (0.5, 0.6]: conf 0.575, acc 1, gap 0.425, weight 2/4
  EXPECT_EQ(r.bins[8].count, 2u);
  EXPECT_EQ(r.bins[5].count, 2u);
  EXPECT_NEAR(r.ece, 0.5 * 0.4 + 0.5 * 0.425, 1e-12);
  EXPECT_NEAR(r.mce, 0.425, 1e-12);
}

TEST(Calibration, PerfectlyCalibratedOneHot) {
  Matrix p = rows({{1, 0}, {0, 1}, {1, 0}});
  std::vector<int> y = {0, 1, 0};
  auto r = calibration(p, y);
  EXPECT_EQ(r.ece, 0.0);
  EXPECT_EQ(r.bins[9].count, 3u);
}

TEST(Calibration, EceBoundedByOne) {
  Rng rng(1);
  Matrix p(300, 4);
  std::vector<int> y(300);
  for (std::size_t i = 0; i < 300; ++i) {
    std::vector<double> l(4);
    for (double& v : l) v = rng.normal(0, 3);
    auto row = softmax(l);
    std::copy(row.begin(), row.end(), p.row(i).begin());
    y[i] = static_cast<int>(rng.index(4));
  }
  auto r = calibration(p, y);
  EXPECT_GE(r.ece, 0.0);
  EXPECT_LE(r.ece, r.mce + 1e-15);
  EXPECT_LE(r.mce, 1.0);
  std::size_t total = 0;
  for (const auto& b : r.bins) total += b.count;
  EXPECT_EQ(total, 300u);
}

TEST(Roc, PerfectReversedAndTied) {
  std::vector<double> id = {0.1, 0.2, 0.3}, ood = {0.5, 0.6};
  auto c = roc(id, ood);
  EXPECT_DOUBLE_EQ(c.auroc, 1.0);
  EXPECT_DOUBLE_EQ(c.auroc20, 1.0);
  auto r = roc(ood, id);
  EXPECT_DOUBLE_EQ(r.auroc, 0.0);
  EXPECT_DOUBLE_EQ(r.auroc20, 0.0);
  std::vector<double> same(5, 1.0);
  auto t = roc(same, same);
  EXPECT_DOUBLE_EQ(t.auroc, 0.5);
  EXPECT_EQ(t.auroc20, 0.1);
  EXPECT_EQ(t.points.size(), 2u);
  EXPECT_TRUE(std::isinf(t.points[0].threshold));
}

TEST(Roc, MatchesMannWhitneyAndPartialOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> id(40 + rng.index(40)), ood(20 + rng.index(40));
    // rounded scores create ties
    for (double& v : id) v = std::round(rng.normal(0, 1) * 4) / 4;
    for (double& v : ood) v = std::round(rng.normal(0.8, 1) * 4) / 4;
    auto c = roc(id, ood);
    EXPECT_NEAR(c.auroc, mann_whitney(id, ood), 1e-12);
    EXPECT_NEAR(c.auroc20, partial_auc_oracle(id, ood, 0.2) / 0.2, 1e-5);
    for (std::size_t i = 1; i < c.points.size(); ++i) {
      EXPECT_GE(c.points[i].fpr, c.points[i - 1].fpr);
      EXPECT_GE(c.points[i].tpr, c.points[i - 1].tpr);
    }
    EXPECT_DOUBLE_EQ(c.points.back().fpr, 1.0);
    EXPECT_DOUBLE_EQ(c.points.back().tpr, 1.0);
    EXPECT_GE(c.auroc20, 0.0);
    EXPECT_LE(c.auroc20, 1.0);
  }
}

TEST(Roc, Errors) {
  std::vector<double> a = {1.0};
  EXPECT_THROW(roc(a, std::vector<double>{}), EmptyDataset);
  EXPECT_THROW(roc(std::vector<double>{}, a), EmptyDataset);
  EXPECT_THROW(roc(a, std::vector<double>{NAN}), InvalidInput);
}

TEST(Rejection, HandComputedCurve) {
  // 4 samples; the most uncertain one is wrong
  std::vector<double> u = {0.1, 0.9, 0.2, 0.3};
  std::vector<int> pred = {0, 1, 1, 0}, truth = {0, 0, 1, 0};
  auto c = accuracy_rejection(u, pred, truth);
  ASSERT_EQ(c.points.size(), 20u);
  EXPECT_DOUBLE_EQ(c.points[0].accuracy, 0.75);
  EXPECT_EQ(c.points[0].retained, 4u);
  // 5% of 4 rounds up to one dropped sample
  EXPECT_EQ(c.points[1].retained, 3u);
  EXPECT_DOUBLE_EQ(c.points[1].accuracy, 1.0);
  EXPECT_EQ(c.points[10].retained, 2u);
  EXPECT_EQ(c.points[19].retained, 0u);
  EXPECT_TRUE(std::isnan(c.points[19].accuracy));
}

TEST(Rejection, TiesDropLargerIndexFirst) {
  std::vector<double> u = {0.5, 0.5};
  std::vector<int> pred = {0, 1}, truth = {0, 0};
  auto c = accuracy_rejection(u, pred, truth);
  EXPECT_EQ(c.points[1].retained, 1u);
  EXPECT_DOUBLE_EQ(c.points[1].accuracy, 1.0);
}

TEST(Rejection, RetainedCountsAndOracleRanking) {
  Rng rng(3);
  const std::size_t n = 997;
  std::vector<double> u(n);
  std::vector<int> pred(n), truth(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = rng.uniform();
    pred[i] = u[i] > 0.7 ? 1 : 0;   // errors are exactly the most uncertain
  }
  auto c = accuracy_rejection(u, pred, truth);
  for (std::size_t k = 0; k < 20; ++k) {
    const auto dropped = static_cast<std::size_t>(std::ceil(static_cast<double>(k) * n / 20.0 - 1e-9));
    EXPECT_EQ(c.points[k].retained, n - dropped);
    EXPECT_DOUBLE_EQ(c.points[k].rejection, k / 20.0);
    if (k > 0) {
      EXPECT_GE(c.points[k].accuracy, c.points[k - 1].accuracy);
    }
  }
  EXPECT_THROW(accuracy_rejection(u, std::vector<int>{0}, truth), DimensionMismatch);
}

TEST(Emitters, CsvHeadersAndRows) {
  std::vector<double> id = {0.1, 0.2}, ood = {0.3};
  std::ostringstream a, b, c;
  write_roc_csv(a, roc(id, ood));
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "fpr,tpr,threshold");
  std::vector<double> u = {0.1, 0.2};
  std::vector<int> y = {0, 1};
  write_rejection_csv(b, accuracy_rejection(u, y, y));
  const std::string bs = b.str();
  EXPECT_EQ(std::count(bs.begin(), bs.end(), '\n'), 21);
  write_calibration_csv(c, calibration(rows({{1, 0}, {0, 1}}), y));
  const std::string cs = c.str();
  EXPECT_EQ(std::count(cs.begin(), cs.end(), '\n'), 11);
  auto j = to_json(roc(id, ood));
  EXPECT_DOUBLE_EQ(j["auroc"].get<double>(), 1.0);
}

TEST(Metrics, AllPredictedAsOneClass) {
  auto m = classification_metrics(std::vector<int>{0, 0, 0, 0}, std::vector<int>{0, 0, 1, 1}, 2);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
  EXPECT_NEAR(m.f1_per_class[0], 2.0 / 3.0, 1e-15);
  EXPECT_EQ(m.f1_per_class[1], 0.0);
  EXPECT_NEAR(m.f1_macro, 1.0 / 3.0, 1e-15);
  auto same = classification_metrics(std::vector<int>{1, 0, 1}, std::vector<int>{1, 0, 1}, 2);
  EXPECT_EQ(same.accuracy, 1.0);
  EXPECT_EQ(same.f1_macro, 1.0);
  EXPECT_EQ(same.f1_weighted, 1.0);
}

TEST(Calibration, MatchedBinHasZeroError) {
  Matrix p(4, 2, {0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.75, 0.25});
  auto r = calibration(p, std::vector<int>{0, 0, 0, 1});
  EXPECT_NEAR(r.ece, 0.0, 1e-15);
  EXPECT_NEAR(r.mce, 0.0, 1e-15);
  EXPECT_EQ(r.bins[7].count, 4u);
}

TEST(Rejection, NoRejectionAndAllCorrect) {
  std::vector<double> u = {0.3, 0.1, 0.8, 0.5, 0.2};
  std::vector<int> truth = {0, 1, 1, 0, 2};
  auto c = accuracy_rejection(u, std::vector<int>{0, 1, 0, 0, 1}, truth);
  EXPECT_DOUBLE_EQ(c.points[0].accuracy, 0.6);
  auto perfect = accuracy_rejection(u, truth, truth);
  for (const auto& pt : perfect.points)
    if (pt.retained > 0) {
      EXPECT_EQ(pt.accuracy, 1.0);
    }
}
