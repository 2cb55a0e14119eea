#pragma once

// Mean-field Gaussian variational posterior over the weights of a dense ReLU
// network (no batch norm), trained on the reparameterized ELBO against a
// zero-mean isotropic Gaussian prior.

#include <cmath>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <vector>

#include "flowuq/flow_data.hpp"
#include "flowuq/mlp.hpp"
#include "flowuq/nn_core.hpp"
#include "flowuq/uncertainty.hpp"

namespace flowuq {

struct BnnConfig {
  std::size_t hidden_layers = 2;
  std::size_t hidden_width = 64;
  /// Prior variance; when unset it is 1 / (2 * weight_decay).
  std::optional<double> prior_variance;
  double weight_decay = 0.1;
  double learning_rate = 1e-2;
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  std::size_t num_predict_samples = 16;
  /// Weight of KL(q || prior) against the mean batch NLL; when unset it is
  /// 1 / (number of training samples).
  std::optional<double> kl_scale;
  std::uint64_t seed = 0;
  std::size_t min_steps = 0;

  double prior_var() const { return prior_variance.value_or(1.0 / (2.0 * weight_decay)); }

  void validate() const {
    if (hidden_layers == 0 || hidden_width == 0 || batch_size == 0)
      throw ConfigError("bnn: sizes must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("bnn: learning rate must be positive");
    if (!(prior_var() > 0.0) || !std::isfinite(prior_var())) throw ConfigError("bnn: prior variance must be positive");
    if (num_predict_samples == 0) throw ConfigError("bnn: at least one predictive sample");
    if (kl_scale && *kl_scale < 0.0) throw ConfigError("bnn: kl_scale must be non-negative");
  }
};

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// KL( N(mu, sigma^2) || N(0, prior_variance) ) for one parameter.
inline double kl_gaussian(double mu, double sigma, double prior_variance) {
  if (!(sigma > 0.0)) throw InvalidInput("kl: sigma must be positive");
  if (!(prior_variance > 0.0)) throw InvalidInput("kl: prior variance must be positive");
  return 0.5 * std::log(prior_variance) - std::log(sigma) + (sigma * sigma + mu * mu) / (2.0 * prior_variance) - 0.5;
}

/// Summed KL over parameters.
inline double kl_gaussian(std::span<const double> mu, std::span<const double> sigma, double prior_variance) {
  if (mu.size() != sigma.size()) throw DimensionMismatch("kl: mu and sigma lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) s += kl_gaussian(mu[i], sigma[i], prior_variance);
  return s;
}

/// q(w) = prod N(mu_i, softplus(rho_i)^2). `mean` and `rho` share one network
/// layout.
class VariationalPosterior {
 public:
  BnnConfig config;
  nn::Network mean;
  nn::Network rho;
  std::vector<EpochRecord> history;

  std::size_t input_dim() const { return mean.input_dim(); }
  std::size_t num_classes() const { return mean.num_classes(); }

  /// One weight sample mu + sigma * eps, eps ~ N(0, 1), drawn in parameter
  /// order.
  nn::Network sample(Rng& rng) const {
    nn::Network eps = nn::zeros_like(mean);
    for (auto block : nn::parameters(eps))
      for (double& e : block) e = rng.normal();
    return reparameterize(eps);
  }

  /// mu + softplus(rho) * eps for a given noise network.
  nn::Network reparameterize(const nn::Network& eps) const {
    nn::Network w = mean;
    auto pw = nn::parameters(w);
    auto pr = nn::parameters(rho);
    auto pe = nn::parameters(eps);
    for (std::size_t b = 0; b < pw.size(); ++b)
      for (std::size_t i = 0; i < pw[b].size(); ++i) pw[b][i] += softplus(pr[b][i]) * pe[b][i];
    return w;
  }

  double kl() const {
    auto pm = nn::parameters(mean);
    auto pr = nn::parameters(rho);
    double s = 0.0;
    for (std::size_t b = 0; b < pm.size(); ++b)
      for (std::size_t i = 0; i < pm[b].size(); ++i) s += kl_gaussian(pm[b][i], softplus(pr[b][i]), config.prior_var());
    return s;
  }

  /// Mean posterior standard deviation of the first-layer weights.
  double mean_first_layer_sigma() const {
    const auto& r = rho.hidden.front().weight.data();
    double s = 0.0;
    for (double v : r) s += softplus(v);
    return s / static_cast<double>(r.size());
  }
};

inline VariationalPosterior init_bnn(std::size_t input_dim, std::size_t num_classes, const BnnConfig& cfg) {
  cfg.validate();
  nn::Shape s{input_dim, cfg.hidden_layers, cfg.hidden_width, num_classes, false, false};
  VariationalPosterior q;
  q.config = cfg;
  q.mean = nn::make_network(s);
  Rng rng = Rng(cfg.seed).split(1);
  nn::init_uniform_fan_in(q.mean, rng);
  q.rho = nn::zeros_like(q.mean);
  const double rho0 = inverse_softplus(0.05 * std::sqrt(cfg.prior_var()));
  for (auto block : nn::parameters(q.rho)) std::fill(block.begin(), block.end(), rho0);
  return q;
}

/// Mini-batch objective: mean NLL of the batch under the weights
/// mu + sigma * eps, plus kl_scale * KL(q || prior). Fills gradients with
/// respect to mu and rho when requested.
inline double bnn_objective(const VariationalPosterior& q, const nn::Network& eps, const Matrix& x, std::span<const int> y,
                            double kl_scale, nn::Network* grad_mean, nn::Network* grad_rho) {
  nn::Network w = q.reparameterize(eps);
  nn::ForwardCache cache;
  Matrix logits;
  nn::forward(w, x, nn::Mode::Train, &cache, &logits, nullptr);
  const bool want = grad_mean && grad_rho;
  Matrix dlogits;
  double loss = nn::cross_entropy(logits, y, want ? &dlogits : nullptr) + kl_scale * q.kl();
  if (!want) return loss;
  nn::Network gw = nn::backward(w, cache, dlogits);
  *grad_mean = nn::zeros_like(q.mean);
  *grad_rho = nn::zeros_like(q.mean);
  auto pm = nn::parameters(q.mean);
  auto pr = nn::parameters(q.rho);
  auto pe = nn::parameters(eps);
  auto pg = nn::parameters(gw);
  auto gm = nn::parameters(*grad_mean);
  auto gr = nn::parameters(*grad_rho);
  const double a2 = q.config.prior_var();
  for (std::size_t b = 0; b < pm.size(); ++b)
    for (std::size_t i = 0; i < pm[b].size(); ++i) {
      const double sigma = softplus(pr[b][i]);
      const double dsig = sigmoid(pr[b][i]);
      const double dkl_dmu = pm[b][i] / a2;
      const double dkl_dsigma = -1.0 / sigma + sigma / a2;
      gm[b][i] = pg[b][i] + kl_scale * dkl_dmu;
      gr[b][i] = (pg[b][i] * pe[b][i] + kl_scale * dkl_dsigma) * dsig;
    }
  return loss;
}

/// Adam on (mu, rho) with one weight sample per mini-batch.
inline VariationalPosterior train_bnn(const FlowDataset& train, const FlowDataset& val, const BnnConfig& cfg,
                                      const VariationalPosterior* warm_start = nullptr) {
  cfg.validate();
  detail::check_training_sets(train, val);
  VariationalPosterior q = warm_start ? *warm_start : init_bnn(train.dim(), train.num_classes(), cfg);
  if (q.input_dim() != train.dim() || q.num_classes() != train.num_classes())
    throw DimensionMismatch("bnn: warm start does not match the data");
  q.config = cfg;
  const std::size_t n = train.size();
  const double kl_scale = cfg.kl_scale.value_or(1.0 / static_cast<double>(n));
  Rng rng(cfg.seed);
  Rng shuffle_rng = rng.split(2);
  Rng noise_rng = rng.split(3);
  Rng eval_rng = rng.split(4);

  nn::Adam adam(cfg.learning_rate);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t epochs = effective_epochs(cfg.epochs, cfg.min_steps, n, cfg.batch_size);
  nn::Network eps = nn::zeros_like(q.mean);
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
      for (auto block : nn::parameters(eps))
        for (double& e : block) e = noise_rng.normal();
      nn::Network gm, gr;
      loss_sum += bnn_objective(q, eps, xb, yb, kl_scale, &gm, &gr);
      ++batches;
      auto params = nn::parameters(q.mean);
      auto rho_params = nn::parameters(q.rho);
      params.insert(params.end(), rho_params.begin(), rho_params.end());
      auto grads = nn::parameters(gm);
      auto rho_grads = nn::parameters(gr);
      grads.insert(grads.end(), rho_grads.begin(), rho_grads.end());
      adam.step(params, grads);
    }
    EpochRecord rec;
    rec.loss = loss_sum / static_cast<double>(batches);
    if (!val.empty()) {
      Rng r = eval_rng.split(epoch);
      Matrix mean_probs(val.size(), q.num_classes());
      for (std::size_t s = 0; s < cfg.num_predict_samples; ++s) {
        nn::Network w = q.sample(r);
        Matrix logits;
        nn::forward(w, val.features, nn::Mode::Infer, nullptr, &logits, nullptr);
        Matrix p = nn::softmax_rows(logits);
        for (std::size_t i = 0; i < p.size(); ++i) mean_probs.data()[i] += p.data()[i];
      }
      std::vector<int> pred(val.size());
      for (std::size_t i = 0; i < val.size(); ++i) pred[i] = static_cast<int>(argmax(mean_probs.row(i)));
      rec.val_accuracy = detail::accuracy_of(pred, val.labels);
    }
    q.history.push_back(rec);
  }
  return q;
}

/// Per-row summary of an N-sample ensemble over a batch of inputs.
struct BatchEnsembleSummary {
  Matrix mean_probs;
  std::vector<UncertaintyReport> reports;
};

/// Draws N weight samples (shared across the rows of `x`) and summarizes the
/// member distributions row by row without storing them.
inline BatchEnsembleSummary bnn_predict_batch(const VariationalPosterior& q, const Matrix& x, std::size_t num_samples,
                                              std::uint64_t seed) {
  if (num_samples == 0) throw InvalidInput("bnn: need at least one sample");
  if (x.cols() != q.input_dim()) throw DimensionMismatch("bnn: input dimension mismatch");
  Rng rng(seed);
  BatchEnsembleSummary out;
  out.mean_probs = Matrix(x.rows(), q.num_classes());
  std::vector<double> mean_h(x.rows(), 0.0);
  for (std::size_t s = 0; s < num_samples; ++s) {
    nn::Network w = q.sample(rng);
    Matrix logits;
    nn::forward(w, x, nn::Mode::Infer, nullptr, &logits, nullptr);
    Matrix p = nn::softmax_rows(logits);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      mean_h[i] += entropy(p.row(i));
      auto dst = out.mean_probs.row(i);
      auto src = p.row(i);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(num_samples);
  for (double& v : out.mean_probs.data()) v *= inv;
  out.reports.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out.reports[i] = report_from_moments(out.mean_probs.row(i), mean_h[i] * inv);
  return out;
}

/// N member distributions for one input, each from an independent weight
/// sample. Uses the same weight draws as `bnn_predict_batch` with equal seed.
inline EnsemblePrediction sample_predictions(const VariationalPosterior& q, std::span<const double> x,
                                             std::size_t num_samples, std::uint64_t seed) {
  if (num_samples == 0) throw InvalidInput("bnn: need at least one sample");
  if (x.size() != q.input_dim()) throw DimensionMismatch("bnn: input dimension mismatch");
  Rng rng(seed);
  Matrix xm(1, x.size(), std::vector<double>(x.begin(), x.end()));
  EnsemblePrediction e;
  for (std::size_t s = 0; s < num_samples; ++s) {
    nn::Network w = q.sample(rng);
    Matrix logits;
    nn::forward(w, xm, nn::Mode::Infer, nullptr, &logits, nullptr);
    e.members.push_back(softmax(logits.row(0)));
  }
  return e;
}

inline std::vector<int> bnn_predict_labels(const VariationalPosterior& q, const Matrix& x, std::uint64_t seed) {
  auto s = bnn_predict_batch(q, x, q.config.num_predict_samples, seed);
  std::vector<int> y(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) y[i] = static_cast<int>(argmax(s.mean_probs.row(i)));
  return y;
}

// ---------------------------------------------------------------------------
// Dump: flowuq-bnn version 1.

inline void save_bnn(std::ostream& os, const VariationalPosterior& q) {
  DumpWriter w(os, "bnn", 1);
  const auto& c = q.config;
  w.integer("config.hidden_layers", static_cast<std::int64_t>(c.hidden_layers));
  w.integer("config.hidden_width", static_cast<std::int64_t>(c.hidden_width));
  w.value("config.prior_variance", c.prior_var());
  w.value("config.weight_decay", c.weight_decay);
  w.value("config.learning_rate", c.learning_rate);
  w.integer("config.batch_size", static_cast<std::int64_t>(c.batch_size));
  w.integer("config.epochs", static_cast<std::int64_t>(c.epochs));
  w.integer("config.num_predict_samples", static_cast<std::int64_t>(c.num_predict_samples));
  if (c.kl_scale) w.value("config.kl_scale", *c.kl_scale);
  w.text("config.seed", std::to_string(c.seed));
  w.integer("config.min_steps", static_cast<std::int64_t>(c.min_steps));
  nn::write_network(w, "mu", q.mean);
  nn::write_network(w, "rho", q.rho);
  std::vector<double> loss, acc;
  for (const auto& h : q.history) {
    loss.push_back(h.loss);
    acc.push_back(h.val_accuracy);
  }
  w.values("history.loss", loss);
  w.values("history.val_accuracy", acc);
}

inline VariationalPosterior load_bnn(std::istream& is) {
  DumpReader r(is, "bnn", 1);
  VariationalPosterior q;
  auto& c = q.config;
  c.hidden_layers = static_cast<std::size_t>(r.integer("config.hidden_layers"));
  c.hidden_width = static_cast<std::size_t>(r.integer("config.hidden_width"));
  c.prior_variance = r.value("config.prior_variance");
  c.weight_decay = r.value("config.weight_decay");
  c.learning_rate = r.value("config.learning_rate");
  c.batch_size = static_cast<std::size_t>(r.integer("config.batch_size"));
  c.epochs = static_cast<std::size_t>(r.integer("config.epochs"));
  c.num_predict_samples = static_cast<std::size_t>(r.integer("config.num_predict_samples"));
  if (r.has("config.kl_scale")) c.kl_scale = r.value("config.kl_scale");
  c.seed = std::stoull(r.text("config.seed"));
  c.min_steps = static_cast<std::size_t>(r.integer("config.min_steps"));
  q.mean = nn::read_network(r, "mu");
  q.rho = nn::read_network(r, "rho");
  auto loss = r.values("history.loss");
  auto acc = r.values("history.val_accuracy");
  for (std::size_t i = 0; i < loss.size(); ++i) q.history.push_back({loss[i], acc[i]});
  return q;
}

}  // namespace flowuq
