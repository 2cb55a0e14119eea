#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "flowuq/num_core.hpp"
#include "flowuq/serialize.hpp"

namespace flowuq {

/// Member predictive distributions from sampled parameters or ensemble
/// members, all over the same K classes.
struct EnsemblePrediction {
  std::vector<ProbVector> members;

  std::size_t size() const noexcept { return members.size(); }

  ProbVector mean() const {
    if (members.empty()) throw InvalidInput("ensemble: no members");
    ProbVector m(members.front().size(), 0.0);
    for (const auto& p : members)
      for (std::size_t k = 0; k < m.size(); ++k) m[k] += p[k];
    for (double& x : m) x /= static_cast<double>(members.size());
    return m;
  }
};

/// Uncertainty of one prediction in nats. total == aleatoric + epistemic
/// holds exactly.
struct UncertaintyReport {
  double total = 0.0;
  double aleatoric = 0.0;
  double epistemic = 0.0;
};

/// Builds a report from the ensemble mean and the mean member entropy.
/// Epistemic is H(mean) - aleatoric; total is then stored as their sum so
/// the identity is exact in floating point (it differs from H(mean) by at
/// most one rounding).
inline UncertaintyReport report_from_moments(std::span<const double> mean_probs, double mean_member_entropy) {
  UncertaintyReport r;
  r.aleatoric = mean_member_entropy;
  r.epistemic = entropy(mean_probs) - mean_member_entropy;
  r.total = r.aleatoric + r.epistemic;
  return r;
}

/// Total = entropy of the mean member, aleatoric = mean member entropy,
/// epistemic = the difference (mutual information estimate).
inline UncertaintyReport decompose(const EnsemblePrediction& e) {
  if (e.members.empty()) throw InvalidInput("decompose: empty ensemble");
  const std::size_t k = e.members.front().size();
  double mean_h = 0.0;
  for (const auto& p : e.members) {
    if (p.size() != k) throw DimensionMismatch("decompose: members differ in length");
    check_prob_vector(p);
    mean_h += entropy(p);
  }
  mean_h /= static_cast<double>(e.members.size());
  return report_from_moments(e.mean(), mean_h);
}

/// -T log sum_i exp(f_i / T); higher means more likely out-of-distribution.
inline double energy_score(std::span<const double> logits, double temperature = 1.0) {
  return -log_sum_exp(logits, temperature);
}

// ---------------------------------------------------------------------------
// Gaussian discriminant density over hidden features

struct FeatureDensityModel {
  std::vector<std::vector<double>> means;
  std::vector<Matrix> covariances;   // jitter included
  std::vector<Matrix> cholesky;      // lower factors of `covariances`
  std::vector<double> priors;
  double jitter = 0.0;

  std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }
  std::size_t num_classes() const { return means.size(); }
};

inline const std::vector<double>& jitter_ladder() {
  static const std::vector<double> ladder = {1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  return ladder;
}

/// Per-class mean and maximum-likelihood covariance, empirical class
/// priors, and the smallest jitter from the ladder that makes every class
/// covariance factorize. Labels must cover 0..C-1 with two or more samples
/// each; `class_names`, when given, is used in error messages.
inline FeatureDensityModel fit_feature_density(const Matrix& features, std::span<const int> labels,
                                               const std::vector<std::string>& class_names = {}) {
  if (features.rows() != labels.size()) throw DimensionMismatch("density: feature rows != labels");
  if (labels.empty()) throw EmptyDataset("density: no samples");
  int max_label = 0;
  for (int y : labels) {
    if (y < 0) throw InvalidInput("density: negative label");
    max_label = std::max(max_label, y);
  }
  const std::size_t c = static_cast<std::size_t>(max_label) + 1;
  const std::size_t d = features.cols();
  const std::size_t n = labels.size();
  std::vector<std::size_t> counts(c, 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  for (std::size_t k = 0; k < c; ++k)
    if (counts[k] < 2) {
      std::string name = k < class_names.size() ? class_names[k] : "class " + std::to_string(k);
      throw InvalidInput("density: " + name + " has fewer than 2 samples");
    }

  FeatureDensityModel m;
  m.means.assign(c, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    auto& mu = m.means[static_cast<std::size_t>(labels[i])];
    auto row = features.row(i);
    for (std::size_t j = 0; j < d; ++j) mu[j] += row[j];
  }
  for (std::size_t k = 0; k < c; ++k)
    for (double& v : m.means[k]) v /= static_cast<double>(counts[k]);

  std::vector<Matrix> cov(c, Matrix(d, d));
  std::vector<double> z(d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    auto row = features.row(i);
    for (std::size_t j = 0; j < d; ++j) z[j] = row[j] - m.means[k][j];
    Matrix& s = cov[k];
    for (std::size_t a = 0; a < d; ++a) {
      if (z[a] == 0.0) continue;
      double* srow = s.row(a).data();
      for (std::size_t b = 0; b < d; ++b) srow[b] += z[a] * z[b];
    }
  }
  for (std::size_t k = 0; k < c; ++k)
    for (double& v : cov[k].data()) v /= static_cast<double>(counts[k]);

  for (double eps : jitter_ladder()) {
    std::vector<Matrix> jittered, factors;
    bool ok = true;
    for (std::size_t k = 0; k < c && ok; ++k) {
      Matrix s = cov[k];
      for (std::size_t j = 0; j < d; ++j) s(j, j) += eps;
      auto l = cholesky(s);
      if (!l) {
        ok = false;
        break;
      }
      jittered.push_back(std::move(s));
      factors.push_back(std::move(*l));
    }
    if (ok) {
      m.covariances = std::move(jittered);
      m.cholesky = std::move(factors);
      m.jitter = eps;
      for (std::size_t k = 0; k < c; ++k) m.priors.push_back(static_cast<double>(counts[k]) / static_cast<double>(n));
      return m;
    }
  }
  throw InvalidInput("density: no jitter on the ladder makes the covariances positive definite");
}

/// log N(z; mu, L L^T)
inline double gaussian_log_pdf(std::span<const double> z, std::span<const double> mean, const Matrix& chol) {
  const std::size_t d = z.size();
  std::vector<double> diff(d);
  for (std::size_t j = 0; j < d; ++j) diff[j] = z[j] - mean[j];
  auto y = forward_substitute(chol, diff);
  double log_det = 0.0;
  for (std::size_t j = 0; j < d; ++j) log_det += 2.0 * std::log(chol(j, j));
  const double maha = dot(y, y);
  return -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det + maha);
}

/// log p(z) = log sum_k p(c_k) N(z; mu_k, Sigma_k). Lower values mean the
/// point is farther from the training features.
inline double feature_log_density(const FeatureDensityModel& m, std::span<const double> z) {
  if (z.size() != m.dim()) throw DimensionMismatch("density: feature dimension mismatch");
  std::vector<double> terms(m.num_classes());
  for (std::size_t k = 0; k < m.num_classes(); ++k)
    terms[k] = std::log(m.priors[k]) + gaussian_log_pdf(z, m.means[k], m.cholesky[k]);
  return log_sum_exp(terms);
}

inline void save_density(DumpWriter& w, const std::string& prefix, const FeatureDensityModel& m) {
  w.integer(prefix + ".classes", static_cast<std::int64_t>(m.num_classes()));
  w.value(prefix + ".jitter", m.jitter);
  w.values(prefix + ".priors", m.priors);
  for (std::size_t k = 0; k < m.num_classes(); ++k) {
    const std::string p = prefix + ".c" + std::to_string(k);
    w.values(p + ".mean", m.means[k]);
    w.matrix(p + ".cov", m.covariances[k]);
  }
}

inline FeatureDensityModel load_density(const DumpReader& r, const std::string& prefix) {
  FeatureDensityModel m;
  const auto c = static_cast<std::size_t>(r.integer(prefix + ".classes"));
  m.jitter = r.value(prefix + ".jitter");
  m.priors = r.values(prefix + ".priors");
  for (std::size_t k = 0; k < c; ++k) {
    const std::string p = prefix + ".c" + std::to_string(k);
    m.means.push_back(r.values(p + ".mean"));
    m.covariances.push_back(r.matrix(p + ".cov"));
    auto l = cholesky(m.covariances.back());
    if (!l) throw FormatError("density dump: covariance is not positive definite");
    m.cholesky.push_back(std::move(*l));
  }
  return m;
}

}  // namespace flowuq
