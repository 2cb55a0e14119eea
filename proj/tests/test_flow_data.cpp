#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "flowuq/flow_data.hpp"
#include "flowuq/forest.hpp"

using namespace flowuq;

namespace {

CsvLoadResult load(const std::string& text, const std::string& label = "Attack") {
  std::istringstream is(text);
  return load_flow_csv(is, label);
}

// Small dataset carrying the ten reference class names, 30 rows each.
FlowDataset reference_classes_dataset() {
  SynthConfig cfg;
  cfg.class_counts.assign(10, 30);
  cfg.dim = 3;
  auto ds = synth_generate(cfg, 1);
  ds.class_names = nf_ton_iot_classes();
  return ds;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST(LoadCsv, LabelsByFirstAppearance) {
  auto r = load("a,b,Attack\n1,2,Benign\n3,4,Benign\n5,6,DDoS\n7,8,Benign\n");
  EXPECT_EQ(r.dataset.labels, (std::vector<int>{0, 0, 1, 0}));
  EXPECT_EQ(r.dataset.class_names, (std::vector<std::string>{"Benign", "DDoS"}));
  EXPECT_EQ(r.dataset.feature_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(r.dataset.features(2, 1), 6.0);
  EXPECT_EQ(r.rejected_rows, 0u);
}

TEST(LoadCsv, DropsIdentifierColumns) {
  auto r = load(
      "IPV4_SRC_ADDR,L4_SRC_PORT,IPV4_DST_ADDR,IN_BYTES,Label,Attack\n"
      "10.0.0.1,80,10.0.0.2,100,0,Benign\n"
      "10.0.0.3,443,10.0.0.4,200,1,DDoS\n");
  EXPECT_EQ(r.dataset.feature_names, (std::vector<std::string>{"L4_SRC_PORT", "IN_BYTES"}));
  EXPECT_EQ(r.dataset.dim(), 2u);
}

TEST(LoadCsv, RejectsUnparsableRows) {
  auto r = load("a,b,Attack\n1,2,x\nNaN,2,y\n3,,x\n4,inf,x\nfoo,1,x\n5,6,y\n");
  EXPECT_EQ(r.dataset.size(), 2u);
  EXPECT_EQ(r.rejected_rows, 4u);
  auto one = load("a,b,Attack\n1,2,x\nNaN,2,x\n");
  EXPECT_EQ(one.rejected_rows, 1u);
}

TEST(LoadCsv, QuotedFields) {
  auto r = load("\"a\",b,Attack\n\"1\",2,\"Port Scan\"\n");
  EXPECT_EQ(r.dataset.class_names.front(), "Port Scan");
  EXPECT_EQ(r.dataset.feature_names.front(), "a");
}

TEST(LoadCsv, Errors) {
  EXPECT_THROW(load("a,b,Label\n1,2,x\n"), SchemaError);
  EXPECT_THROW(load(""), SchemaError);
  EXPECT_THROW(load("a,Attack\nNaN,x\n"), EmptyDataset);
  EXPECT_THROW(load_flow_csv(std::string("/nonexistent/flows.csv")), SchemaError);
}

TEST(DatasetDump, RoundTripIsExact) {
  SynthConfig cfg;
  cfg.class_counts = {7, 5};
  cfg.dim = 3;
  auto ds = synth_generate(cfg, 9);
  std::stringstream ss;
  write_dataset(ss, ds);
  auto back = read_dataset(ss);
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.class_names, ds.class_names);
  EXPECT_EQ(back.feature_names, ds.feature_names);
}

TEST(DatasetDump, RejectsGarbage) {
  std::istringstream bad("hello\n");
  EXPECT_THROW(read_dataset(bad), FormatError);
}

TEST(Partition, NamedScenarios) {
  auto ds = reference_classes_dataset();
  auto b3 = partition_scenario(ds, named_scenario_unknowns("3u", ds.class_names), 0);
  EXPECT_EQ(b3.known_class_names.size(), 7u);
  EXPECT_EQ(b3.unknown_class_names, (std::vector<std::string>{"Backdoor", "MITM", "Ransomware"}));
  auto b8 = partition_scenario(ds, named_scenario_unknowns("8U", ds.class_names), 0);
  EXPECT_EQ(b8.known_class_names, (std::vector<std::string>{"Benign", "Scanning"}));
  auto b6 = partition_scenario(ds, named_scenario_unknowns("6u", ds.class_names), 0);
  EXPECT_EQ(b6.known_class_names.size(), 4u);
}

TEST(Partition, NamedScenarioNeedsReferenceClasses) {
  SynthConfig cfg;
  cfg.class_counts = {10, 10, 10};
  auto ds = synth_generate(cfg, 0);
  EXPECT_THROW(named_scenario_unknowns("3u", ds.class_names), ConfigError);
  EXPECT_THROW(named_scenario_unknowns("4u", nf_ton_iot_classes()), ConfigError);
}

TEST(Partition, SingleUnknownClassKeepsAllItsRows) {
  SynthConfig cfg;
  cfg.class_counts = {80, 70, 50};
  auto ds = synth_generate(cfg, 2);
  auto b = partition_scenario(ds, {"c2"}, 3);
  EXPECT_EQ(b.ood.size(), 50u);
  for (int y : b.ood.labels) EXPECT_EQ(b.ood.class_names[static_cast<std::size_t>(y)], "c2");
}

TEST(Partition, EqualPerClassUnknownCounts) {
  SynthConfig cfg;
  cfg.class_counts = {40, 40, 17, 29};
  auto ds = synth_generate(cfg, 2);
  auto b = partition_scenario(ds, {"c2", "c3"}, 3);
  auto counts = b.ood.class_counts();
  EXPECT_EQ(counts, (std::vector<std::size_t>{17, 17}));
}

TEST(Partition, ProportionsAndNoLeakage) {
  SynthConfig cfg;
  cfg.class_counts = {101, 57, 33, 12};
  cfg.dim = 2;
  auto ds = synth_generate(cfg, 4);
  // tag each row with its index through an extra identifying column
  FlowDataset tagged = ds;
  tagged.features = Matrix(ds.size(), 3);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    tagged.features(i, 0) = ds.features(i, 0);
    tagged.features(i, 1) = ds.features(i, 1);
    tagged.features(i, 2) = static_cast<double>(i);
  }
  tagged.feature_names = {"x0", "x1", "id"};
  auto b = partition_scenario(tagged, {"c3"}, 11);
  std::multiset<double> seen;
  for (const auto* part : {&b.train, &b.val, &b.test})
    for (std::size_t i = 0; i < part->size(); ++i) seen.insert(part->features(i, 2));
  std::multiset<double> expected;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] != 3) expected.insert(static_cast<double>(i));
  EXPECT_EQ(seen, expected);

  auto tr = b.train.class_counts(), va = b.val.class_counts(), te = b.test.class_counts();
  const std::size_t totals[] = {101, 57, 33};
  for (std::size_t k = 0; k < 3; ++k) {
    const double n = static_cast<double>(totals[k]);
    EXPECT_NEAR(static_cast<double>(tr[k]), 0.6 * n, 1.0);
    EXPECT_NEAR(static_cast<double>(va[k]), 0.2 * n, 1.0);
    EXPECT_NEAR(static_cast<double>(te[k]), 0.2 * n, 1.0);
  }
}

TEST(Partition, DeterministicForSeed) {
  auto ds = reference_classes_dataset();
  auto a = partition_scenario(ds, {"MITM"}, 5);
  auto b = partition_scenario(ds, {"MITM"}, 5);
  EXPECT_EQ(a.train.features, b.train.features);
  EXPECT_EQ(a.test.labels, b.test.labels);
  EXPECT_EQ(a.ood.features, b.ood.features);
  auto c = partition_scenario(ds, {"MITM"}, 6);
  EXPECT_NE(a.train.features, c.train.features);
}

TEST(Partition, Errors) {
  auto ds = reference_classes_dataset();
  EXPECT_THROW(partition_scenario(ds, {"Nope"}, 0), InvalidInput);
  EXPECT_THROW(partition_scenario(ds, {}, 0), InvalidInput);
  EXPECT_THROW(partition_scenario(ds, nf_ton_iot_classes(), 0), InvalidInput);
}

TEST(Partition, ClosedSetSplitKeepsEveryClass) {
  SynthConfig cfg;
  cfg.class_counts = {20, 30};
  auto b = closed_set_split(synth_generate(cfg, 0), 1);
  EXPECT_TRUE(b.ood.empty());
  EXPECT_EQ(b.known_class_names.size(), 2u);
  EXPECT_EQ(b.train.size() + b.val.size() + b.test.size(), 50u);
}

TEST(Standardizer, ConstantColumnClampedToOne) {
  FlowDataset ds;
  ds.features = Matrix(3, 1, {2, 2, 2});
  ds.labels = {0, 0, 0};
  ds.class_names = {"a"};
  auto s = Standardizer::fit(ds);
  EXPECT_EQ(s.means[0], 2.0);
  EXPECT_EQ(s.stds[0], 1.0);
  auto t = s.apply(ds);
  for (double v : t.features.data()) EXPECT_EQ(v, 0.0);
}

TEST(Standardizer, ZScoreOnTrainingRows) {
  SynthConfig cfg;
  cfg.class_counts = {100, 50};
  cfg.dim = 4;
  auto ds = synth_generate(cfg, 3);
  auto t = Standardizer::fit(ds).apply(ds);
  for (std::size_t j = 0; j < t.dim(); ++j) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < t.size(); ++i) m += t.features(i, j);
    m /= static_cast<double>(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) v += (t.features(i, j) - m) * (t.features(i, j) - m);
    v /= static_cast<double>(t.size());
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(v, 1.0, 1e-9);
  }
}

TEST(Standardizer, OodUsesTrainingStatistics) {
  SynthConfig cfg;
  cfg.class_counts = {100, 100};
  cfg.dim = 3;
  cfg.num_unknown = 1;
  cfg.unknown_count = 60;
  auto b = partition_scenario(synth_generate(cfg, 8), {"c2"}, 0);
  auto s = Standardizer::fit(b.train);
  auto ood = s.apply(b.ood);
  double m = 0;
  for (std::size_t i = 0; i < ood.size(); ++i) m += ood.features(i, 0);
  m /= static_cast<double>(ood.size());
  EXPECT_GT(std::abs(m), 0.5);
  EXPECT_THROW(Standardizer::fit(FlowDataset{}), EmptyDataset);
}

TEST(Synth, SeparatedBlobsAreStumpSeparable) {
  SynthConfig cfg;
  cfg.class_counts = {100, 100};
  cfg.dim = 2;
  cfg.centers = {{0, 0}, {10, 0}};
  auto ds = synth_generate(cfg, 0);
  ForestConfig fc;
  fc.num_trees = 1;
  fc.max_depth = 1;
  fc.bootstrap = false;
  fc.features_per_split = FeatureSubset::All;
  auto f = train_forest(ds, fc);
  auto pred = forest_predict_labels(f, ds.features);
  EXPECT_EQ(pred, ds.labels);
}

TEST(Synth, Deterministic) {
  SynthConfig cfg;
  cfg.class_counts = {10, 20};
  cfg.num_unknown = 2;
  cfg.unknown_count = 5;
  auto a = synth_generate(cfg, 42), b = synth_generate(cfg, 42);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.class_names.size(), 4u);
}

TEST(Synth, FarUnknownIsSeparatedFromKnowns) {
  SynthConfig cfg;
  cfg.class_counts = {100, 100};
  cfg.dim = 2;
  cfg.centers = {{0, 0}, {3, 0}};
  cfg.num_unknown = 1;
  cfg.unknown_count = 100;
  cfg.unknown_distance = 20;
  auto ds = synth_generate(cfg, 17);
  double max_known = 0, min_cross = INFINITY;
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = i + 1; j < ds.size(); ++j) {
      const bool ui = ds.labels[i] == 2, uj = ds.labels[j] == 2;
      const double d = sq_dist(ds.features.row(i), ds.features.row(j));
      if (!ui && !uj) max_known = std::max(max_known, d);
      if (ui != uj) min_cross = std::min(min_cross, d);
    }
  EXPECT_GT(min_cross, max_known);
}

TEST(Synth, ConfigErrors) {
  SynthConfig cfg;
  EXPECT_THROW(synth_generate(cfg, 0), ConfigError);
  cfg.class_counts = {10, 0};
  EXPECT_THROW(synth_generate(cfg, 0), ConfigError);
  cfg.class_counts = {10, 10};
  cfg.scale = -1;
  EXPECT_THROW(synth_generate(cfg, 0), ConfigError);
}
