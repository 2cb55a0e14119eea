#include <gtest/gtest.h>

#include "flowuq/ood.hpp"

using namespace flowuq;

namespace {

struct Models {
  FlowDataset train;
  TrainedMlp mlp;
  DduModel ddu;
  VariationalPosterior bnn;
  TrainedForest rf;
};

const Models& models() {
  static const Models m = [] {
    Models out;
    SynthConfig cfg;
    cfg.class_counts = {150, 150, 150};
    cfg.dim = 3;
    out.train = synth_generate(cfg, 1);
    MlpConfig mc;
    mc.epochs = 3;
    out.mlp = train_mlp(out.train, {}, mc);
    MlpConfig dc = MlpConfig::ddu();
    dc.epochs = 3;
    out.ddu.net = train_mlp(out.train, {}, dc);
    out.ddu.density = fit_feature_density(out.ddu.net.predict_batch(out.train.features).features, out.train.labels);
    BnnConfig bc;
    bc.epochs = 2;
    bc.hidden_width = 16;
    out.bnn = train_bnn(out.train, {}, bc);
    ForestConfig fc;
    fc.num_trees = 10;
    out.rf = train_forest(out.train, fc);
    return out;
  }();
  return m;
}

}  // namespace

TEST(OodScore, MlpRulesMatchDirectComputation) {
  const auto& m = models();
  ScoreOptions opt;
  opt.temperature = 2.0;
  auto ent = score_batch(&m.mlp, ScoreRule::SoftmaxEntropy, m.train.features, opt);
  auto en = score_batch(&m.mlp, ScoreRule::Energy, m.train.features, opt);
  for (std::size_t i = 0; i < 20; ++i) {
    auto out = m.mlp.predict(m.train.features.row(i));
    EXPECT_NEAR(ent[i], entropy(out.probs), 1e-12);
    EXPECT_NEAR(en[i], -log_sum_exp(out.logits, 2.0), 1e-12);
    EXPECT_EQ(score(&m.mlp, ScoreRule::Energy, m.train.features.row(i), opt), en[i]);
  }
}

TEST(OodScore, DduIsNegatedLogDensity) {
  const auto& m = models();
  auto s = score_batch(&m.ddu, ScoreRule::FeatureDensity, m.train.features);
  for (std::size_t i = 0; i < 20; ++i) {
    auto z = m.ddu.net.predict(m.train.features.row(i)).features;
    EXPECT_NEAR(s[i], -feature_log_density(m.ddu.density, z), 1e-9);
  }
}

TEST(OodScore, EnsembleRulesUseEpistemic) {
  const auto& m = models();
  ScoreOptions opt;
  opt.num_samples = 8;
  opt.seed = 4;
  auto b = score_batch(&m.bnn, ScoreRule::BnnEpistemic, m.train.features, opt);
  auto summary = bnn_predict_batch(m.bnn, m.train.features, 8, 4);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b[i], summary.reports[i].epistemic);
  auto r = score_batch(&m.rf, ScoreRule::ForestEpistemic, m.train.features);
  for (std::size_t i = 0; i < 20; ++i)
    EXPECT_EQ(r[i], decompose(forest_members(m.rf, m.train.features.row(i))).epistemic);
}

TEST(OodScore, FarPointsScoreHigherForDensity) {
  const auto& m = models();
  Matrix x(2, 3, std::vector<double>{0, 0, 0, 200, -200, 200});
  auto s = score_batch(&m.ddu, ScoreRule::FeatureDensity, x);
  EXPECT_GT(s[1], s[0]);
}

TEST(OodScore, IncompatiblePairsRaiseCapabilityError) {
  const auto& m = models();
  const std::vector<ModelRef> refs = {&m.mlp, &m.ddu, &m.bnn, &m.rf};
  const std::vector<ScoreRule> rules = {ScoreRule::SoftmaxEntropy, ScoreRule::Energy, ScoreRule::FeatureDensity,
                                        ScoreRule::BnnEpistemic, ScoreRule::ForestEpistemic};
  std::size_t ok = 0;
  for (const auto& ref : refs)
    for (auto rule : rules) {
      if (compatible(ref, rule)) {
        ++ok;
        EXPECT_NO_THROW(score(ref, rule, m.train.features.row(0)));
      } else {
        EXPECT_THROW(score(ref, rule, m.train.features.row(0)), CapabilityError);
      }
    }
  EXPECT_EQ(ok, 5u);
}

TEST(OodDecide, StrictThreshold) {
  EXPECT_TRUE(decide(1.0001, 1.0, 2).unknown());
  auto at = decide(1.0, 1.0, 2);
  ASSERT_FALSE(at.unknown());
  EXPECT_EQ(*at.known_class, 2u);
  EXPECT_EQ(*decide(-5.0, 1.0, 0).known_class, 0u);
  EXPECT_THROW(decide(0.0, NAN, 0), InvalidInput);
  EXPECT_THROW(decide(0.0, INFINITY, 0), InvalidInput);
}

TEST(OodDecide, MonotoneInThreshold) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const double s = rng.normal();
    const double lo = rng.normal(), hi = lo + rng.uniform(0, 2);
    // raising the threshold never turns a known decision into unknown
    if (!decide(s, lo, 0).unknown()) {
      EXPECT_FALSE(decide(s, hi, 0).unknown());
    }
  }
}

TEST(OodScore, RuleNames) {
  EXPECT_EQ(to_string(ScoreRule::Energy), "energy");
  EXPECT_EQ(to_string(ScoreRule::FeatureDensity), "feature_density");
}

TEST(OodScore, UniformNetworkScoresLogK) {
  SynthConfig cfg;
  cfg.class_counts = std::vector<std::size_t>(7, 10);
  cfg.dim = 3;
  auto ds = synth_generate(cfg, 2);
  MlpConfig mc;
  mc.epochs = 0;
  auto m = train_mlp(ds, {}, mc);
  for (auto block : nn::parameters(m.net)) std::fill(block.begin(), block.end(), 0.0);
  EXPECT_NEAR(score(&m, ScoreRule::SoftmaxEntropy, ds.features.row(0)), std::log(7.0), 1e-12);
}

TEST(OodScore, CollapsedPosteriorScoresZero) {
  VariationalPosterior q = models().bnn;
  for (auto block : nn::parameters(q.rho)) std::fill(block.begin(), block.end(), inverse_softplus(1e-12));
  for (std::size_t i = 0; i < 5; ++i)
    EXPECT_NEAR(score(&q, ScoreRule::BnnEpistemic, models().train.features.row(i)), 0.0, 1e-9);
}

TEST(OodDecide, Examples) {
  EXPECT_TRUE(decide(0.9, 0.7, 3).unknown());
  auto d = decide(0.5, 0.7, 3);
  ASSERT_FALSE(d.unknown());
  EXPECT_EQ(*d.known_class, 3u);
  EXPECT_FALSE(decide(0.7, 0.7, 1).unknown());
}
