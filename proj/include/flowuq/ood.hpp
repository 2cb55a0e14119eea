#pragma once

// Out-of-distribution scores for every model family, all oriented so that
// a larger value means "more likely unknown", and the threshold rule built
// on them.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "flowuq/bnn.hpp"
#include "flowuq/forest.hpp"
#include "flowuq/mlp.hpp"
#include "flowuq/uncertainty.hpp"

namespace flowuq {

enum class ScoreRule { SoftmaxEntropy, Energy, FeatureDensity, BnnEpistemic, ForestEpistemic };

inline std::string to_string(ScoreRule r) {
  switch (r) {
    case ScoreRule::SoftmaxEntropy: return "softmax_entropy";
    case ScoreRule::Energy: return "energy";
    case ScoreRule::FeatureDensity: return "feature_density";
    case ScoreRule::BnnEpistemic: return "bnn_epistemic";
    case ScoreRule::ForestEpistemic: return "forest_epistemic";
  }
  return "?";
}

/// Spectrally normalized residual MLP plus the class-conditional Gaussian
/// density fitted on its last hidden layer.
struct DduModel {
  TrainedMlp net;
  FeatureDensityModel density;
};

using ModelRef = std::variant<const TrainedMlp*, const DduModel*, const VariationalPosterior*, const TrainedForest*>;

struct ScoreOptions {
  double temperature = 1.0;
  std::size_t num_samples = 16;   // BNN weight draws
  std::uint64_t seed = 0;         // BNN sampling seed
};

inline bool compatible(const ModelRef& m, ScoreRule rule) {
  switch (m.index()) {
    case 0: return rule == ScoreRule::SoftmaxEntropy || rule == ScoreRule::Energy;
    case 1: return rule == ScoreRule::FeatureDensity;
    case 2: return rule == ScoreRule::BnnEpistemic;
    case 3: return rule == ScoreRule::ForestEpistemic;
  }
  return false;
}

inline const char* model_name(const ModelRef& m) {
  static const char* names[] = {"mlp", "ddu", "bnn", "rf"};
  return names[m.index()];
}

/// Scores every row of `x`.
inline std::vector<double> score_batch(const ModelRef& model, ScoreRule rule, const Matrix& x,
                                       const ScoreOptions& opt = {}) {
  if (!compatible(model, rule))
    throw CapabilityError(std::string("score rule ") + to_string(rule) + " is not available for model " +
                          model_name(model));
  std::vector<double> s(x.rows());
  switch (model.index()) {
    case 0: {
      const auto& m = *std::get<0>(model);
      auto out = m.predict_batch(x);
      for (std::size_t i = 0; i < x.rows(); ++i)
        s[i] = rule == ScoreRule::Energy ? energy_score(out.logits.row(i), opt.temperature)
                                         : entropy(out.probs.row(i));
      break;
    }
    case 1: {
      const auto& m = *std::get<1>(model);
      auto out = m.net.predict_batch(x);
      for (std::size_t i = 0; i < x.rows(); ++i) s[i] = -feature_log_density(m.density, out.features.row(i));
      break;
    }
    case 2: {
      auto summary = bnn_predict_batch(*std::get<2>(model), x, opt.num_samples, opt.seed);
      for (std::size_t i = 0; i < x.rows(); ++i) s[i] = summary.reports[i].epistemic;
      break;
    }
    case 3: {
      const auto& f = *std::get<3>(model);
      for (std::size_t i = 0; i < x.rows(); ++i) s[i] = decompose(forest_members(f, x.row(i))).epistemic;
      break;
    }
  }
  require_finite(s, "ood score");
  return s;
}

inline double score(const ModelRef& model, ScoreRule rule, std::span<const double> x, const ScoreOptions& opt = {}) {
  Matrix m(1, x.size(), std::vector<double>(x.begin(), x.end()));
  return score_batch(model, rule, m, opt).front();
}

/// Either a known class index or "unknown" (no value).
struct OodDecision {
  std::optional<std::size_t> known_class;
  bool unknown() const noexcept { return !known_class.has_value(); }
};

/// Unknown iff s > tau; s == tau falls to the classifier's class.
inline OodDecision decide(double s, double tau, std::size_t fallback_class) {
  if (!std::isfinite(tau)) throw InvalidInput("decide: threshold must be finite");
  if (s > tau) return {};
  return {fallback_class};
}

}  // namespace flowuq
