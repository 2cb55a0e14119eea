#pragma once

// End-to-end wiring: data source -> split -> standardize -> train ->
// evaluate, repeated over derived seeds, with JSON / CSV artifacts.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "flowuq/active_learning.hpp"
#include "flowuq/bnn.hpp"
#include "flowuq/evaluation.hpp"
#include "flowuq/flow_data.hpp"
#include "flowuq/forest.hpp"
#include "flowuq/mlp.hpp"
#include "flowuq/ood.hpp"

namespace flowuq {

inline constexpr const char* kVersion = "0.1.0";

enum class ModelKind { Nn, Energy, Ddu, Bnn, Rf };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Nn: return "nn";
    case ModelKind::Energy: return "energy";
    case ModelKind::Ddu: return "ddu";
    case ModelKind::Bnn: return "bnn";
    case ModelKind::Rf: return "rf";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  const auto l = detail::lower(s);
  if (l == "nn") return ModelKind::Nn;
  if (l == "energy") return ModelKind::Energy;
  if (l == "ddu") return ModelKind::Ddu;
  if (l == "bnn") return ModelKind::Bnn;
  if (l == "rf") return ModelKind::Rf;
  throw ConfigError("unknown model '" + s + "' (expected nn, energy, ddu, bnn or rf)");
}

/// Random forests see raw features; every network-based model sees
/// features standardized with training statistics.
inline bool standardizes(ModelKind k) { return k != ModelKind::Rf; }

struct ModelSettings {
  MlpConfig nn;
  MlpConfig ddu = MlpConfig::ddu();
  BnnConfig bnn;
  ForestConfig rf;
  double temperature = 1.0;
};

/// One trained model of any kind together with its input transform.
struct TrainedModel {
  ModelKind kind = ModelKind::Nn;
  std::optional<Standardizer> standardizer;
  std::variant<TrainedMlp, DduModel, VariationalPosterior, TrainedForest> model;
  double temperature = 1.0;
  std::uint64_t sample_seed = 0;   // BNN predictive sampling

  std::size_t num_classes() const {
    switch (model.index()) {
      case 0: return std::get<0>(model).num_classes();
      case 1: return std::get<1>(model).net.num_classes();
      case 2: return std::get<2>(model).num_classes();
      default: return std::get<3>(model).num_classes;
    }
  }

  /// The exact matrix the underlying model receives for raw input `x`.
  Matrix prepare(const Matrix& x) const { return standardizer ? standardizer->transform(x) : x; }

  ModelRef ref() const {
    switch (model.index()) {
      case 0: return &std::get<0>(model);
      case 1: return &std::get<1>(model);
      case 2: return &std::get<2>(model);
      default: return &std::get<3>(model);
    }
  }

  ScoreRule ood_rule() const {
    switch (kind) {
      case ModelKind::Nn: return ScoreRule::SoftmaxEntropy;
      case ModelKind::Energy: return ScoreRule::Energy;
      case ModelKind::Ddu: return ScoreRule::FeatureDensity;
      case ModelKind::Bnn: return ScoreRule::BnnEpistemic;
      case ModelKind::Rf: return ScoreRule::ForestEpistemic;
    }
    return ScoreRule::SoftmaxEntropy;
  }

  ScoreOptions score_options() const {
    ScoreOptions o;
    o.temperature = temperature;
    o.seed = sample_seed;
    if (model.index() == 2) o.num_samples = std::get<2>(model).config.num_predict_samples;
    return o;
  }

  struct Prediction {
    Matrix probs;
    std::vector<int> labels;
    std::vector<double> total;       // total predictive uncertainty
    std::vector<double> epistemic;   // empty for single-network models
  };

  Prediction predict(const Matrix& raw) const {
    const Matrix x = prepare(raw);
    Prediction p;
    switch (model.index()) {
      case 0:
      case 1: {
        const TrainedMlp& net = model.index() == 0 ? std::get<0>(model) : std::get<1>(model).net;
        p.probs = net.predict_batch(x).probs;
        for (std::size_t i = 0; i < x.rows(); ++i) p.total.push_back(entropy(p.probs.row(i)));
        break;
      }
      case 2: {
        const auto& q = std::get<2>(model);
        auto s = bnn_predict_batch(q, x, q.config.num_predict_samples, sample_seed);
        p.probs = std::move(s.mean_probs);
        for (const auto& r : s.reports) {
          p.total.push_back(r.total);
          p.epistemic.push_back(r.epistemic);
        }
        break;
      }
      default: {
        const auto& f = std::get<3>(model);
        p.probs = Matrix(x.rows(), f.num_classes);
        for (std::size_t i = 0; i < x.rows(); ++i) {
          auto e = forest_members(f, x.row(i));
          auto m = e.mean();
          std::copy(m.begin(), m.end(), p.probs.row(i).begin());
          auto r = decompose(e);
          p.total.push_back(r.total);
          p.epistemic.push_back(r.epistemic);
        }
      }
    }
    for (std::size_t i = 0; i < x.rows(); ++i) p.labels.push_back(static_cast<int>(argmax(p.probs.row(i))));
    return p;
  }

  std::vector<double> ood_scores(const Matrix& raw) const {
    return score_batch(ref(), ood_rule(), prepare(raw), score_options());
  }

  bool supports(AlStrategy s) const {
    if (s == AlStrategy::Random || s == AlStrategy::Total) return true;
    return kind == ModelKind::Ddu || kind == ModelKind::Bnn || kind == ModelKind::Rf;
  }

  /// Acquisition scores: bald -> epistemic (negated density for DDU),
  /// total -> total predictive uncertainty (softmax entropy for networks).
  std::vector<double> al_scores(const Matrix& raw, AlStrategy s, std::uint64_t seed) const {
    if (!supports(s)) throw CapabilityError("model " + to_string(kind) + " cannot score " + to_string(s));
    if (s == AlStrategy::Random) return std::vector<double>(raw.rows(), 0.0);
    if (kind == ModelKind::Ddu && s == AlStrategy::Bald) return ood_scores(raw);
    TrainedModel copy_seed = *this;
    copy_seed.sample_seed = seed;
    auto p = (kind == ModelKind::Bnn ? copy_seed : *this).predict(raw);
    return s == AlStrategy::Bald ? p.epistemic : p.total;
  }
};

namespace detail {

/// Gaussian density over last-hidden features of the training rows; classes
/// with fewer than two rows are left out of the mixture.
inline FeatureDensityModel fit_ddu_density(const TrainedMlp& net, const FlowDataset& train) {
  auto counts = train.class_counts();
  std::vector<int> remap(counts.size(), -1);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < counts.size(); ++k)
    if (counts[k] >= 2) {
      remap[k] = static_cast<int>(names.size());
      names.push_back(train.class_names[k]);
    }
  if (names.empty()) throw InvalidInput("ddu: no class has two or more training samples");
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const int m = remap[static_cast<std::size_t>(train.labels[i])];
    if (m < 0) continue;
    rows.push_back(i);
    labels.push_back(m);
  }
  auto features = net.predict_batch(select_rows(train.features, rows)).features;
  return fit_feature_density(features, labels, names);
}

}  // namespace detail

/// Trains `kind` on raw `train` (and optional raw `val`) with model seed
/// `seed`. `warm`, when it has the same kind, seeds network weights.
inline TrainedModel train_model(ModelKind kind, const ModelSettings& s, const FlowDataset& train,
                                const FlowDataset& val, std::uint64_t seed, const TrainedModel* warm = nullptr) {
  TrainedModel out;
  out.kind = kind;
  out.temperature = s.temperature;
  out.sample_seed = Rng(seed).split(77).seed();
  if (warm && warm->kind != kind) warm = nullptr;
  if (standardizes(kind)) out.standardizer = Standardizer::fit(train);
  const FlowDataset tr = out.standardizer ? out.standardizer->apply(train) : train;
  const FlowDataset va = out.standardizer && !val.empty() ? out.standardizer->apply(val) : val;
  switch (kind) {
    case ModelKind::Nn:
    case ModelKind::Energy: {
      auto cfg = s.nn;
      cfg.seed = seed;
      out.model = train_mlp(tr, va, cfg, warm ? &std::get<0>(warm->model) : nullptr);
      break;
    }
    case ModelKind::Ddu: {
      auto cfg = s.ddu;
      cfg.seed = seed;
      auto net = train_mlp(tr, va, cfg, warm ? &std::get<1>(warm->model).net : nullptr);
      auto density = detail::fit_ddu_density(net, tr);
      out.model = DduModel{std::move(net), std::move(density)};
      break;
    }
    case ModelKind::Bnn: {
      auto cfg = s.bnn;
      cfg.seed = seed;
      out.model = train_bnn(tr, va, cfg, warm ? &std::get<2>(warm->model) : nullptr);
      break;
    }
    case ModelKind::Rf: {
      auto cfg = s.rf;
      cfg.seed = seed;
      out.model = train_forest(tr, cfg);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model files: an outer "flowuq-model" section, a "--" line, then the dump
// of the underlying model.

inline void save_model(std::ostream& os, const TrainedModel& m) {
  {
    DumpWriter w(os, "model", 1);
    w.text("kind", to_string(m.kind));
    w.value("temperature", m.temperature);
    w.text("sample_seed", std::to_string(m.sample_seed));
    w.integer("standardized", m.standardizer.has_value());
    if (m.standardizer) {
      w.values("standardizer.means", m.standardizer->means);
      w.values("standardizer.stds", m.standardizer->stds);
    }
    if (m.model.index() == 1) save_density(w, "density", std::get<1>(m.model).density);
  }
  os << "--\n";
  switch (m.model.index()) {
    case 0: save_mlp(os, std::get<0>(m.model)); break;
    case 1: save_mlp(os, std::get<1>(m.model).net); break;
    case 2: save_bnn(os, std::get<2>(m.model)); break;
    default: save_forest(os, std::get<3>(m.model)); break;
  }
}

inline TrainedModel load_model(std::istream& is) {
  std::stringstream outer, inner;
  std::string line;
  bool split = false;
  while (std::getline(is, line)) {
    if (!split && line == "--") {
      split = true;
      continue;
    }
    (split ? inner : outer) << line << '\n';
  }
  if (!split) throw FormatError("model dump: missing section separator");
  DumpReader r(outer, "model", 1);
  TrainedModel m;
  m.kind = parse_model_kind(r.text("kind"));
  m.temperature = r.value("temperature");
  m.sample_seed = std::stoull(r.text("sample_seed"));
  if (r.integer("standardized")) m.standardizer = Standardizer{r.values("standardizer.means"), r.values("standardizer.stds")};
  switch (m.kind) {
    case ModelKind::Nn:
    case ModelKind::Energy: m.model = load_mlp(inner); break;
    case ModelKind::Ddu: m.model = DduModel{load_mlp(inner), load_density(r, "density")}; break;
    case ModelKind::Bnn: m.model = load_bnn(inner); break;
    case ModelKind::Rf: m.model = load_forest(inner); break;
  }
  return m;
}

inline void save_model(const std::string& path, const TrainedModel& m) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  save_model(os, m);
}

inline TrainedModel load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot open " + path);
  return load_model(is);
}

/// Active-learning adapter around `train_model`.
class ModelLearner : public Learner {
 public:
  ModelLearner(ModelKind kind, ModelSettings settings) : kind_(kind), settings_(std::move(settings)) {}

  void fit(const FlowDataset& train, std::uint64_t seed, bool warm) override {
    auto prev = warm && model_ ? std::move(model_) : std::unique_ptr<TrainedModel>{};
    model_ = std::make_unique<TrainedModel>(train_model(kind_, settings_, train, FlowDataset{}, seed, prev.get()));
  }

  std::vector<int> predict(const Matrix& x) const override { return fitted().predict(x).labels; }

  bool supports(AlStrategy s) const override {
    TrainedModel probe;
    probe.kind = kind_;
    return probe.supports(s);
  }

  std::vector<double> scores(const Matrix& x, AlStrategy s, std::uint64_t seed) const override {
    return fitted().al_scores(x, s, seed);
  }

  const TrainedModel& fitted() const {
    if (!model_) throw Error("learner used before fit");
    return *model_;
  }

 private:
  ModelKind kind_;
  ModelSettings settings_;
  std::unique_ptr<TrainedModel> model_;
};

// ---------------------------------------------------------------------------
// Configuration

enum class Task { Closed, Calibration, Rejection, Ood, Al };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::Closed: return "closed";
    case Task::Calibration: return "calibration";
    case Task::Rejection: return "rejection";
    case Task::Ood: return "ood";
    case Task::Al: return "al";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  const auto l = detail::lower(detail::trim(s));
  if (l == "closed") return Task::Closed;
  if (l == "calibration") return Task::Calibration;
  if (l == "rejection") return Task::Rejection;
  if (l == "ood") return Task::Ood;
  if (l == "al") return Task::Al;
  throw ConfigError("unknown task '" + s + "'");
}

using KeyValues = std::map<std::string, std::string>;

/// `key = value` lines; '#' starts a comment, blank lines are ignored.
inline KeyValues parse_key_values(std::istream& is) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    auto key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues load_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  return parse_key_values(is);
}

struct ExperimentConfig {
  std::string data_source = "synth";   // synth | csv
  std::string csv_path;
  std::string label_column = "Attack";
  SynthConfig synth = [] {
    SynthConfig c;
    c.class_counts = {300, 300, 300};
    c.dim = 4;
    return c;
  }();
  std::string scenario = "none";   // none | 3u | 6u | 8u | custom
  std::vector<std::string> unknown_classes;
  ModelKind model = ModelKind::Rf;
  ModelSettings settings;
  std::vector<Task> tasks = {Task::Closed};
  std::optional<std::size_t> reps;
  std::uint64_t seed = 0;
  AlConfig al;
  std::string out_dir = "out";

  bool has_task(Task t) const { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); }

  std::size_t repetitions() const {
    if (reps) return *reps;
    return tasks.size() == 1 && tasks.front() == Task::Al ? 5 : 16;
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

inline double to_real(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const FormatError&) {
    throw ConfigError("config " + key + ": not a number: '" + v + "'");
  }
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config " + key + ": not a non-negative integer: '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  const auto l = lower(v);
  if (l == "1" || l == "true" || l == "yes" || l == "on") return true;
  if (l == "0" || l == "false" || l == "no" || l == "off") return false;
  throw ConfigError("config " + key + ": not a boolean: '" + v + "'");
}

inline std::string fmt(double v) { return format_double(v); }

inline void mlp_keys(const std::string& p, MlpConfig& c, const std::string& key, const std::string& v, bool& hit) {
  hit = true;
  if (key == p + ".hidden_layers") c.hidden_layers = to_uint(key, v);
  else if (key == p + ".hidden_width") c.hidden_width = to_uint(key, v);
  else if (key == p + ".weight_decay") c.weight_decay = to_real(key, v);
  else if (key == p + ".learning_rate") c.learning_rate = to_real(key, v);
  else if (key == p + ".batch_size") c.batch_size = to_uint(key, v);
  else if (key == p + ".epochs") c.epochs = to_uint(key, v);
  else if (key == p + ".batch_norm") c.batch_norm = to_bool(key, v);
  else if (key == p + ".min_steps") c.min_steps = to_uint(key, v);
  else hit = false;
}

inline void mlp_dump(const std::string& p, const MlpConfig& c, KeyValues& kv) {
  kv[p + ".hidden_layers"] = std::to_string(c.hidden_layers);
  kv[p + ".hidden_width"] = std::to_string(c.hidden_width);
  kv[p + ".weight_decay"] = fmt(c.weight_decay);
  kv[p + ".learning_rate"] = fmt(c.learning_rate);
  kv[p + ".batch_size"] = std::to_string(c.batch_size);
  kv[p + ".epochs"] = std::to_string(c.epochs);
  kv[p + ".batch_norm"] = c.batch_norm ? "true" : "false";
  kv[p + ".min_steps"] = std::to_string(c.min_steps);
}

}  // namespace detail

/// Builds a config from flat keys; unknown keys are rejected.
inline ExperimentConfig config_from_keys(const KeyValues& kv) {
  using namespace detail;
  ExperimentConfig c;
  for (const auto& [key, v] : kv) {
    bool hit = false;
    mlp_keys("nn", c.settings.nn, key, v, hit);
    if (hit) continue;
    mlp_keys("ddu", c.settings.ddu, key, v, hit);
    if (hit) continue;
    auto& b = c.settings.bnn;
    if (key == "data.source") {
      c.data_source = lower(v);
      if (c.data_source != "synth" && c.data_source != "csv") throw ConfigError("data.source must be synth or csv");
    } else if (key == "data.csv") c.csv_path = v;
    else if (key == "data.label_column") c.label_column = v;
    else if (key == "synth.class_counts") {
      c.synth.class_counts.clear();
      for (const auto& s : split_list(v)) c.synth.class_counts.push_back(to_uint(key, s));
    } else if (key == "synth.dim") c.synth.dim = to_uint(key, v);
    else if (key == "synth.center_spread") c.synth.center_spread = to_real(key, v);
    else if (key == "synth.scale") c.synth.scale = to_real(key, v);
    else if (key == "synth.num_unknown") c.synth.num_unknown = to_uint(key, v);
    else if (key == "synth.unknown_count") c.synth.unknown_count = to_uint(key, v);
    else if (key == "synth.unknown_distance") c.synth.unknown_distance = to_real(key, v);
    else if (key == "scenario") {
      c.scenario = lower(v);
      if (c.scenario != "none" && c.scenario != "3u" && c.scenario != "6u" && c.scenario != "8u" &&
          c.scenario != "custom")
        throw ConfigError("scenario must be none, 3u, 6u, 8u or custom");
    } else if (key == "scenario.unknown") c.unknown_classes = split_list(v);
    else if (key == "model") c.model = parse_model_kind(v);
    else if (key == "tasks") {
      c.tasks.clear();
      for (const auto& t : split_list(v)) c.tasks.push_back(parse_task(t));
    } else if (key == "reps") c.reps = to_uint(key, v);
    else if (key == "seed") c.seed = to_uint(key, v);
    else if (key == "out") c.out_dir = v;
    else if (key == "ood.temperature") c.settings.temperature = to_real(key, v);
    else if (key == "bnn.hidden_layers") b.hidden_layers = to_uint(key, v);
    else if (key == "bnn.hidden_width") b.hidden_width = to_uint(key, v);
    else if (key == "bnn.weight_decay") b.weight_decay = to_real(key, v);
    else if (key == "bnn.prior_variance") b.prior_variance = to_real(key, v);
    else if (key == "bnn.kl_scale") b.kl_scale = to_real(key, v);
    else if (key == "bnn.learning_rate") b.learning_rate = to_real(key, v);
    else if (key == "bnn.batch_size") b.batch_size = to_uint(key, v);
    else if (key == "bnn.epochs") b.epochs = to_uint(key, v);
    else if (key == "bnn.samples") b.num_predict_samples = to_uint(key, v);
    else if (key == "bnn.min_steps") b.min_steps = to_uint(key, v);
    else if (key == "rf.trees") c.settings.rf.num_trees = to_uint(key, v);
    else if (key == "rf.max_depth") c.settings.rf.max_depth = to_uint(key, v);
    else if (key == "rf.min_samples_split") c.settings.rf.min_samples_split = to_uint(key, v);
    else if (key == "rf.features") {
      const auto l = lower(v);
      if (l != "sqrt" && l != "all") throw ConfigError("rf.features must be sqrt or all");
      c.settings.rf.features_per_split = l == "all" ? FeatureSubset::All : FeatureSubset::Sqrt;
    } else if (key == "rf.bootstrap") c.settings.rf.bootstrap = to_bool(key, v);
    else if (key == "al.initial") c.al.initial_size = to_uint(key, v);
    else if (key == "al.acquisition") c.al.acquisition_size = to_uint(key, v);
    else if (key == "al.strategy") c.al.strategy = parse_strategy(v);
    else if (key == "al.max_rounds") c.al.max_rounds = to_uint(key, v);
    else if (key == "al.target_f1") c.al.target_f1 = to_real(key, v);
    else if (key == "al.retrain_from_scratch") c.al.retrain_from_scratch = to_bool(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (c.tasks.empty()) throw ConfigError("at least one task is required");
  if (c.reps && *c.reps == 0) throw ConfigError("reps must be >= 1");
  if (c.data_source == "csv" && c.csv_path.empty()) throw ConfigError("data.csv is required for data.source = csv");
  c.settings.nn.validate();
  c.settings.ddu.validate();
  c.settings.bnn.validate();
  c.settings.rf.validate();
  return c;
}

/// Every resolved setting as flat keys (the input to the config hash).
inline KeyValues canonical_keys(const ExperimentConfig& c) {
  using namespace detail;
  KeyValues kv;
  kv["data.source"] = c.data_source;
  if (c.data_source == "csv") {
    kv["data.csv"] = c.csv_path;
    kv["data.label_column"] = c.label_column;
  } else {
    std::vector<std::string> counts;
    for (auto n : c.synth.class_counts) counts.push_back(std::to_string(n));
    kv["synth.class_counts"] = join(counts);
    kv["synth.dim"] = std::to_string(c.synth.dim);
    kv["synth.center_spread"] = fmt(c.synth.center_spread);
    kv["synth.scale"] = fmt(c.synth.scale);
    kv["synth.num_unknown"] = std::to_string(c.synth.num_unknown);
    kv["synth.unknown_count"] = std::to_string(c.synth.unknown_count);
    kv["synth.unknown_distance"] = fmt(c.synth.unknown_distance);
  }
  kv["scenario"] = c.scenario;
  kv["scenario.unknown"] = join(c.unknown_classes);
  kv["model"] = to_string(c.model);
  std::vector<std::string> tasks;
  for (auto t : c.tasks) tasks.push_back(to_string(t));
  kv["tasks"] = join(tasks);
  kv["reps"] = std::to_string(c.repetitions());
  kv["seed"] = std::to_string(c.seed);
  kv["ood.temperature"] = fmt(c.settings.temperature);
  mlp_dump("nn", c.settings.nn, kv);
  mlp_dump("ddu", c.settings.ddu, kv);
  const auto& b = c.settings.bnn;
  kv["bnn.hidden_layers"] = std::to_string(b.hidden_layers);
  kv["bnn.hidden_width"] = std::to_string(b.hidden_width);
  kv["bnn.weight_decay"] = fmt(b.weight_decay);
  kv["bnn.prior_variance"] = fmt(b.prior_var());
  kv["bnn.kl_scale"] = b.kl_scale ? fmt(*b.kl_scale) : "auto";
  kv["bnn.learning_rate"] = fmt(b.learning_rate);
  kv["bnn.batch_size"] = std::to_string(b.batch_size);
  kv["bnn.epochs"] = std::to_string(b.epochs);
  kv["bnn.samples"] = std::to_string(b.num_predict_samples);
  kv["bnn.min_steps"] = std::to_string(b.min_steps);
  const auto& f = c.settings.rf;
  kv["rf.trees"] = std::to_string(f.num_trees);
  kv["rf.max_depth"] = f.max_depth ? std::to_string(*f.max_depth) : "none";
  kv["rf.min_samples_split"] = std::to_string(f.min_samples_split);
  kv["rf.features"] = f.features_per_split == FeatureSubset::All ? "all" : "sqrt";
  kv["rf.bootstrap"] = f.bootstrap ? "true" : "false";
  if (c.has_task(Task::Al)) {
    kv["al.initial"] = std::to_string(c.al.initial_size);
    kv["al.acquisition"] = std::to_string(c.al.acquisition_size);
    kv["al.strategy"] = to_string(c.al.strategy);
    kv["al.max_rounds"] = std::to_string(c.al.max_rounds);
    kv["al.target_f1"] = c.al.target_f1 ? fmt(*c.al.target_f1) : "none";
    kv["al.retrain_from_scratch"] = c.al.retrain_from_scratch ? "true" : "false";
  }
  return kv;
}

/// 64-bit FNV-1a over the canonical "key=value" lines, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : canonical_keys(c))
    for (char ch : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ULL;
    }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Experiment

inline FlowDataset load_source(const ExperimentConfig& c) {
  if (c.data_source == "csv") return load_flow_csv(c.csv_path, c.label_column).dataset;
  return synth_generate(c.synth, Rng(c.seed).split(10).seed());
}

/// Unknown class names for the configured scenario (empty for "none").
inline std::vector<std::string> resolve_unknowns(const ExperimentConfig& c, const FlowDataset& ds) {
  if (c.scenario == "none") return {};
  if (c.scenario == "custom") {
    if (!c.unknown_classes.empty()) return c.unknown_classes;
    // Synthetic unknown clusters are the trailing classes.
    if (c.data_source == "synth" && c.synth.num_unknown > 0) {
      std::vector<std::string> out(ds.class_names.end() - static_cast<std::ptrdiff_t>(c.synth.num_unknown),
                                   ds.class_names.end());
      return out;
    }
    throw ConfigError("scenario custom needs scenario.unknown");
  }
  return named_scenario_unknowns(c.scenario, ds.class_names);
}

inline ScenarioBundle prepare_split(const ExperimentConfig& c, const FlowDataset& ds) {
  const auto unknowns = resolve_unknowns(c, ds);
  if (c.has_task(Task::Ood) && unknowns.empty()) throw ConfigError("task ood needs a scenario with unknown classes");
  const auto split_seed = Rng(c.seed).split(11).seed();
  return unknowns.empty() ? closed_set_split(ds, split_seed) : partition_scenario(ds, unknowns, split_seed);
}

struct ExperimentResult {
  nlohmann::json report;
  std::filesystem::path dir;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  os << s;
}

}  // namespace detail

/// Runs every configured task for each repetition. The data split depends
/// only on the base seed; the model seed of repetition r is derived from it.
/// Artifacts land in `<out>/<config hash>/`.
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  namespace fs = std::filesystem;
  const auto ds = load_source(c);
  const auto bundle = prepare_split(c, ds);
  const std::string hash = config_hash(c);
  const fs::path dir = fs::path(c.out_dir) / hash;
  fs::create_directories(dir / "curves");
  fs::create_directories(dir / "models");

  const std::size_t reps = c.repetitions();
  const std::size_t k = bundle.known_class_names.size();
  nlohmann::json per_rep = nlohmann::json::array();
  std::vector<std::uint64_t> model_seeds;
  std::map<std::string, std::vector<double>> series;

  for (std::size_t r = 0; r < reps; ++r) {
    const auto seed = Rng(c.seed).split(100 + r).seed();
    model_seeds.push_back(seed);
    nlohmann::json metrics = nlohmann::json::object();
    const std::string tag = "rep" + std::to_string(r);
    const bool needs_model = c.has_task(Task::Closed) || c.has_task(Task::Calibration) ||
                             c.has_task(Task::Rejection) || c.has_task(Task::Ood);
    if (needs_model) {
      auto model = train_model(c.model, c.settings, bundle.train, bundle.val, seed);
      save_model((dir / "models" / (to_string(c.model) + "_" + tag + ".dump")).string(), model);
      const auto pred = model.predict(bundle.test.features);
      if (c.has_task(Task::Closed)) {
        auto m = classification_metrics(pred.labels, bundle.test.labels, k);
        metrics["accuracy"] = m.accuracy;
        metrics["f1_macro"] = m.f1_macro;
        metrics["f1_weighted"] = m.f1_weighted;
      }
      if (c.has_task(Task::Calibration)) {
        auto cal = calibration(pred.probs, bundle.test.labels);
        metrics["ece"] = cal.ece;
        metrics["mce"] = cal.mce;
        std::ostringstream os;
        write_calibration_csv(os, cal);
        detail::write_text(dir / "curves" / ("calibration_" + tag + ".csv"), os.str());
      }
      if (c.has_task(Task::Rejection)) {
        auto curve = accuracy_rejection(pred.total, pred.labels, bundle.test.labels);
        metrics["rejection_accuracy_0"] = curve.points[0].accuracy;
        metrics["rejection_accuracy_50"] = curve.points[10].accuracy;
        std::ostringstream os;
        write_rejection_csv(os, curve);
        detail::write_text(dir / "curves" / ("rejection_" + tag + ".csv"), os.str());
      }
      if (c.has_task(Task::Ood)) {
        auto s_id = model.ood_scores(bundle.test.features);
        auto s_ood = model.ood_scores(bundle.ood.features);
        auto curve = roc(s_id, s_ood);
        metrics["auroc"] = curve.auroc;
        metrics["auroc20"] = curve.auroc20;
        std::ostringstream os;
        write_roc_csv(os, curve);
        detail::write_text(dir / "curves" / ("roc_" + tag + ".csv"), os.str());
      }
    }
    if (c.has_task(Task::Al)) {
      AlConfig al = c.al;
      al.seed = seed;
      const auto kind = c.model;
      const auto settings = c.settings;
      auto trace = run_loop([&] { return std::make_unique<ModelLearner>(kind, settings); }, bundle.train,
                            bundle.test, al);
      metrics["al_final_f1_macro"] = trace.records.back().f1_macro;
      metrics["al_final_labeled"] = static_cast<double>(trace.records.back().labeled_size);
      metrics["al_rounds"] = static_cast<double>(trace.records.size());
      std::ostringstream os;
      write_trace_csv(os, trace);
      detail::write_text(dir / "curves" / ("al_" + tag + ".csv"), os.str());
    }
    for (const auto& [name, v] : metrics.items()) series[name].push_back(v.get<double>());
    per_rep.push_back({{"rep", r}, {"seed", seed}, {"metrics", metrics}});
  }

  nlohmann::json aggregate = nlohmann::json::object();
  for (const auto& [name, xs] : series) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double se = 0.0;
    if (xs.size() > 1) {
      double ss = 0.0;
      for (double x : xs) ss += (x - mean) * (x - mean);
      se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    aggregate[name] = {{"mean", mean}, {"stderr", se}};
  }

  nlohmann::json config = nlohmann::json::object();
  for (const auto& [key, v] : canonical_keys(c)) config[key] = v;
  nlohmann::json report = {
      {"model", to_string(c.model)},
      {"scenario", c.scenario},
      {"known_classes", bundle.known_class_names},
      {"unknown_classes", bundle.unknown_class_names},
      {"sizes",
       {{"train", bundle.train.size()}, {"val", bundle.val.size()}, {"test", bundle.test.size()}, {"ood", bundle.ood.size()}}},
      {"repetitions", per_rep},
      {"aggregate", aggregate},
      {"provenance",
       {{"config_hash", hash},
        {"seed", c.seed},
        {"split_seed", Rng(c.seed).split(11).seed()},
        {"model_seeds", model_seeds},
        {"version", kVersion},
        {"config", config}}}};
  detail::write_text(dir / "report.json", report.dump(2) + "\n");
  return {report, dir};
}

}  // namespace flowuq
