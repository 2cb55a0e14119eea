#pragma once

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include "flowuq/flow_data.hpp"
#include "flowuq/nn_core.hpp"

namespace flowuq {

struct MlpConfig {
  std::size_t hidden_layers = 2;
  std::size_t hidden_width = 64;
  double weight_decay = 0.1;       // coefficient of sum ||W||^2
  double learning_rate = 1e-2;
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  bool batch_norm = true;
  /// Identity skips around width-preserving hidden layers plus spectral
  /// normalization of every weight matrix after each update.
  bool ddu_mode = false;
  std::uint64_t seed = 0;
  /// Lower bound on optimizer steps; extra epochs are run to reach it. Zero
  /// keeps the plain epoch count.
  std::size_t min_steps = 0;

  static MlpConfig ddu() {
    MlpConfig c;
    c.ddu_mode = true;
    c.batch_size = 256;
    return c;
  }

  void validate() const {
    if (hidden_layers == 0 || hidden_width == 0 || batch_size == 0)
      throw ConfigError("mlp: sizes must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("mlp: learning rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("mlp: weight decay must be non-negative");
  }
};

struct EpochRecord {
  double loss = 0.0;
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
};

/// Effective epoch count once `min_steps` is honoured.
inline std::size_t effective_epochs(std::size_t epochs, std::size_t min_steps, std::size_t n,
                                    std::size_t batch_size) {
  const std::size_t per_epoch = (n + batch_size - 1) / batch_size;
  if (per_epoch == 0 || min_steps == 0) return epochs;
  return std::max(epochs, (min_steps + per_epoch - 1) / per_epoch);
}

/// Deterministic classifier: trained network plus its configuration and
/// training history.
class TrainedMlp {
 public:
  struct Output {
    std::vector<double> logits;
    ProbVector probs;
    std::vector<double> features;
  };

  struct BatchOutput {
    Matrix logits;
    Matrix probs;
    Matrix features;
  };

  MlpConfig config;
  nn::Network net;
  std::vector<EpochRecord> history;

  std::size_t input_dim() const { return net.input_dim(); }
  std::size_t num_classes() const { return net.num_classes(); }

  BatchOutput predict_batch(const Matrix& x) const {
    BatchOutput out;
    nn::forward(net, x, nn::Mode::Infer, nullptr, &out.logits, &out.features);
    out.probs = nn::softmax_rows(out.logits);
    return out;
  }

  Output predict(std::span<const double> x) const {
    if (x.size() != input_dim()) throw DimensionMismatch("mlp: input dimension mismatch");
    Matrix m(1, x.size(), std::vector<double>(x.begin(), x.end()));
    auto b = predict_batch(m);
    Output o;
    o.logits.assign(b.logits.data().begin(), b.logits.data().end());
    o.probs.assign(b.probs.data().begin(), b.probs.data().end());
    o.features.assign(b.features.data().begin(), b.features.data().end());
    return o;
  }

  std::vector<int> predict_labels(const Matrix& x) const {
    auto b = predict_batch(x);
    std::vector<int> y(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) y[i] = static_cast<int>(argmax(b.logits.row(i)));
    return y;
  }
};

/// Freshly initialized model (what training starts from).
inline TrainedMlp init_mlp(std::size_t input_dim, std::size_t num_classes, const MlpConfig& cfg) {
  cfg.validate();
  nn::Shape s{input_dim, cfg.hidden_layers, cfg.hidden_width, num_classes, cfg.batch_norm, cfg.ddu_mode};
  TrainedMlp m;
  m.config = cfg;
  m.net = nn::make_network(s);
  Rng rng = Rng(cfg.seed).split(1);
  nn::init_uniform_fan_in(m.net, rng);
  return m;
}

/// Training objective on one batch, batch norm in training mode:
/// mean cross-entropy + weight_decay * sum ||W||^2. Moving statistics are
/// not touched. Fills `grad` when non-null.
inline double mlp_loss(const nn::Network& net, const Matrix& x, std::span<const int> y, double weight_decay,
                       nn::Network* grad) {
  nn::ForwardCache cache;
  Matrix logits;
  nn::forward(net, x, nn::Mode::Train, &cache, &logits, nullptr);
  Matrix dlogits;
  double loss = nn::cross_entropy(logits, y, grad ? &dlogits : nullptr);
  for (const Matrix* w : nn::weight_matrices(net))
    for (double v : w->data()) loss += weight_decay * v * v;
  if (grad) {
    *grad = nn::backward(net, cache, dlogits);
    auto ws = nn::weight_matrices(net);
    auto gs = nn::weight_matrices(*grad);
    for (std::size_t k = 0; k < ws.size(); ++k)
      for (std::size_t i = 0; i < ws[k]->size(); ++i) gs[k]->data()[i] += 2.0 * weight_decay * ws[k]->data()[i];
  }
  return loss;
}

namespace detail {

inline double accuracy_of(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (truth.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) ok += pred[i] == truth[i];
  return static_cast<double>(ok) / static_cast<double>(truth.size());
}

inline void check_training_sets(const FlowDataset& train, const FlowDataset& val) {
  train.validate();
  if (train.empty()) throw EmptyDataset("training set is empty");
  if (train.num_classes() < 2) throw InvalidInput("need at least two classes");
  if (!val.empty()) {
    val.validate();
    if (val.dim() != train.dim()) throw DimensionMismatch("train/val feature dimensions differ");
    if (val.num_classes() != train.num_classes()) throw DimensionMismatch("train/val class counts differ");
  }
}

}  // namespace detail

/// Adam over shuffled mini-batches. `warm_start`, when given, replaces the
/// fresh initialization.
inline TrainedMlp train_mlp(const FlowDataset& train, const FlowDataset& val, const MlpConfig& cfg,
                            const TrainedMlp* warm_start = nullptr) {
  cfg.validate();
  detail::check_training_sets(train, val);
  TrainedMlp model = warm_start ? *warm_start : init_mlp(train.dim(), train.num_classes(), cfg);
  if (model.input_dim() != train.dim() || model.num_classes() != train.num_classes())
    throw DimensionMismatch("mlp: warm start does not match the data");
  model.config = cfg;
  Rng rng(cfg.seed);
  Rng shuffle_rng = rng.split(2);
  Rng sn_rng = rng.split(3);

  std::vector<nn::SpectralNormalizer> normalizers;
  if (cfg.ddu_mode)
    for (Matrix* w : nn::weight_matrices(model.net)) normalizers.emplace_back(*w, sn_rng);

  nn::Adam adam(cfg.learning_rate);
  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t epochs = effective_epochs(cfg.epochs, cfg.min_steps, n, cfg.batch_size);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Matrix xb = select_rows(train.features, idx);
      std::vector<int> yb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = train.labels[idx[i]];

      nn::ForwardCache cache;
      Matrix logits;
      nn::forward(model.net, xb, nn::Mode::Train, &cache, &logits, nullptr,
                  model.net.batch_norm() ? model.net.norms.data() : nullptr);
      Matrix dlogits;
      double loss = nn::cross_entropy(logits, yb, &dlogits);
      nn::Network grad = nn::backward(model.net, cache, dlogits);
      auto ws = nn::weight_matrices(model.net);
      auto gs = nn::weight_matrices(grad);
      for (std::size_t k = 0; k < ws.size(); ++k)
        for (std::size_t i = 0; i < ws[k]->size(); ++i) {
          const double w = ws[k]->data()[i];
          loss += cfg.weight_decay * w * w;
          gs[k]->data()[i] += 2.0 * cfg.weight_decay * w;
        }
      adam.step(nn::parameters(model.net), nn::parameters(grad));
      if (cfg.ddu_mode)
        for (std::size_t k = 0; k < ws.size(); ++k) normalizers[k].normalize(*ws[k]);
      loss_sum += loss;
      ++batches;
    }
    EpochRecord rec;
    rec.loss = loss_sum / static_cast<double>(batches);
    if (!val.empty()) rec.val_accuracy = detail::accuracy_of(model.predict_labels(val.features), val.labels);
    model.history.push_back(rec);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Dump: flowuq-mlp version 1.

inline void save_mlp(std::ostream& os, const TrainedMlp& m) {
  DumpWriter w(os, "mlp", 1);
  const auto& c = m.config;
  w.integer("config.hidden_layers", static_cast<std::int64_t>(c.hidden_layers));
  w.integer("config.hidden_width", static_cast<std::int64_t>(c.hidden_width));
  w.value("config.weight_decay", c.weight_decay);
  w.value("config.learning_rate", c.learning_rate);
  w.integer("config.batch_size", static_cast<std::int64_t>(c.batch_size));
  w.integer("config.epochs", static_cast<std::int64_t>(c.epochs));
  w.integer("config.batch_norm", c.batch_norm);
  w.integer("config.ddu_mode", c.ddu_mode);
  w.text("config.seed", std::to_string(c.seed));
  w.integer("config.min_steps", static_cast<std::int64_t>(c.min_steps));
  nn::write_network(w, "net", m.net);
  std::vector<double> loss, acc;
  for (const auto& h : m.history) {
    loss.push_back(h.loss);
    acc.push_back(h.val_accuracy);
  }
  w.values("history.loss", loss);
  w.values("history.val_accuracy", acc);
}

inline TrainedMlp load_mlp(std::istream& is) {
  DumpReader r(is, "mlp", 1);
  TrainedMlp m;
  auto& c = m.config;
  c.hidden_layers = static_cast<std::size_t>(r.integer("config.hidden_layers"));
  c.hidden_width = static_cast<std::size_t>(r.integer("config.hidden_width"));
  c.weight_decay = r.value("config.weight_decay");
  c.learning_rate = r.value("config.learning_rate");
  c.batch_size = static_cast<std::size_t>(r.integer("config.batch_size"));
  c.epochs = static_cast<std::size_t>(r.integer("config.epochs"));
  c.batch_norm = r.integer("config.batch_norm") != 0;
  c.ddu_mode = r.integer("config.ddu_mode") != 0;
  c.seed = std::stoull(r.text("config.seed"));
  c.min_steps = static_cast<std::size_t>(r.integer("config.min_steps"));
  m.net = nn::read_network(r, "net");
  auto loss = r.values("history.loss");
  auto acc = r.values("history.val_accuracy");
  for (std::size_t i = 0; i < loss.size(); ++i) m.history.push_back({loss[i], acc[i]});
  return m;
}

}  // namespace flowuq
