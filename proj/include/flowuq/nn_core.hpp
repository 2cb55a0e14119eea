#pragma once

// Dense ReLU network shared by the deterministic and Bayesian classifiers:
// hidden layers (optionally batch-normalized, optionally with identity skips)
// followed by a linear output layer. Inputs are row-major batches.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "flowuq/num_core.hpp"
#include "flowuq/serialize.hpp"

namespace flowuq::nn {

struct DenseLayer {
  Matrix weight;              // in x out
  std::vector<double> bias;   // empty when the layer feeds batch norm
};

/// Batch normalization with exponential moving statistics. The moving
/// averages start at zero and are debiased by 1 - momentum^updates when
/// read, so early inference uses the statistics actually seen.
struct BatchNorm {
  std::vector<double> gamma, beta;
  std::vector<double> moving_mean, moving_var;
  std::uint64_t updates = 0;
  double momentum = 0.99;
  double epsilon = 1e-3;

  double debias() const { return 1.0 - std::pow(momentum, static_cast<double>(updates)); }

  double running_mean(std::size_t j) const { return updates ? moving_mean[j] / debias() : 0.0; }
  double running_var(std::size_t j) const { return updates ? moving_var[j] / debias() : 1.0; }
};

struct Network {
  std::vector<DenseLayer> hidden;
  std::vector<BatchNorm> norms;   // empty, or one per hidden layer
  DenseLayer output;
  bool residual = false;          // identity skip on width-preserving hidden layers

  std::size_t input_dim() const { return hidden.empty() ? output.weight.rows() : hidden.front().weight.rows(); }
  std::size_t num_classes() const { return output.weight.cols(); }
  bool batch_norm() const { return !norms.empty(); }

  bool has_skip(std::size_t layer) const {
    return residual && hidden[layer].weight.rows() == hidden[layer].weight.cols();
  }

  bool operator==(const Network& o) const {
    auto same_layer = [](const DenseLayer& a, const DenseLayer& b) {
      return a.weight == b.weight && a.bias == b.bias;
    };
    if (hidden.size() != o.hidden.size() || norms.size() != o.norms.size() || residual != o.residual) return false;
    for (std::size_t i = 0; i < hidden.size(); ++i)
      if (!same_layer(hidden[i], o.hidden[i])) return false;
    for (std::size_t i = 0; i < norms.size(); ++i) {
      const auto &a = norms[i], &b = o.norms[i];
      if (a.gamma != b.gamma || a.beta != b.beta || a.moving_mean != b.moving_mean ||
          a.moving_var != b.moving_var || a.updates != b.updates)
        return false;
    }
    return same_layer(output, o.output);
  }
};

struct Shape {
  std::size_t input_dim = 0;
  std::size_t hidden_layers = 2;
  std::size_t hidden_width = 64;
  std::size_t num_classes = 2;
  bool batch_norm = false;
  bool residual = false;
};

/// Zero-valued network of the given shape.
inline Network make_network(const Shape& s) {
  Network net;
  net.residual = s.residual;
  std::size_t in = s.input_dim;
  for (std::size_t l = 0; l < s.hidden_layers; ++l) {
    DenseLayer layer{Matrix(in, s.hidden_width), {}};
    if (!s.batch_norm) layer.bias.assign(s.hidden_width, 0.0);
    net.hidden.push_back(std::move(layer));
    if (s.batch_norm) {
      BatchNorm bn;
      bn.gamma.assign(s.hidden_width, 1.0);
      bn.beta.assign(s.hidden_width, 0.0);
      bn.moving_mean.assign(s.hidden_width, 0.0);
      bn.moving_var.assign(s.hidden_width, 0.0);
      net.norms.push_back(std::move(bn));
    }
    in = s.hidden_width;
  }
  net.output = DenseLayer{Matrix(in, s.num_classes), std::vector<double>(s.num_classes, 0.0)};
  return net;
}

/// Same structure with every trainable value zeroed; used for gradients and
/// optimizer moments.
inline Network zeros_like(const Network& net) {
  Network z = net;
  for (auto& l : z.hidden) {
    l.weight.fill(0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  for (auto& bn : z.norms) {
    std::fill(bn.gamma.begin(), bn.gamma.end(), 0.0);
    std::fill(bn.beta.begin(), bn.beta.end(), 0.0);
  }
  z.output.weight.fill(0.0);
  std::fill(z.output.bias.begin(), z.output.bias.end(), 0.0);
  return z;
}

/// Trainable arrays in a fixed order: per hidden layer weight, bias, gamma,
/// beta; then output weight and bias. Empty arrays are skipped.
inline std::vector<std::span<double>> parameters(Network& net) {
  std::vector<std::span<double>> p;
  auto push = [&](std::vector<double>& v) {
    if (!v.empty()) p.emplace_back(v);
  };
  for (std::size_t l = 0; l < net.hidden.size(); ++l) {
    push(net.hidden[l].weight.data());
    push(net.hidden[l].bias);
    if (net.batch_norm()) {
      push(net.norms[l].gamma);
      push(net.norms[l].beta);
    }
  }
  push(net.output.weight.data());
  push(net.output.bias);
  return p;
}

inline std::vector<std::span<const double>> parameters(const Network& net) {
  auto p = parameters(const_cast<Network&>(net));
  return {p.begin(), p.end()};
}

/// Weight matrices only (the L2 and spectral-normalization targets).
inline std::vector<Matrix*> weight_matrices(Network& net) {
  std::vector<Matrix*> w;
  for (auto& l : net.hidden) w.push_back(&l.weight);
  w.push_back(&net.output.weight);
  return w;
}

inline std::vector<const Matrix*> weight_matrices(const Network& net) {
  std::vector<const Matrix*> w;
  for (const auto& l : net.hidden) w.push_back(&l.weight);
  w.push_back(&net.output.weight);
  return w;
}

/// Uniform fan-in initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
/// weights; biases start at zero.
inline void init_uniform_fan_in(Network& net, Rng& rng) {
  for (Matrix* w : weight_matrices(net)) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(w->rows()));
    for (double& x : w->data()) x = rng.uniform(-limit, limit);
  }
}

enum class Mode { Train, Infer };

/// Intermediate values kept by a training-mode forward pass.
struct ForwardCache {
  std::vector<Matrix> inputs;                 // input of each hidden layer
  std::vector<Matrix> xhat;                   // normalized pre-activations
  std::vector<std::vector<double>> inv_std;   // per hidden layer, per unit
  std::vector<Matrix> act_in;                 // ReLU inputs
  Matrix features;                            // output of the last hidden layer
  Matrix logits;
};

inline void add_row_vector(Matrix& m, std::span<const double> b) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
}

/// Forward pass. In Train mode batch norm uses batch statistics and, given a
/// `stats_sink` (one entry per hidden layer), folds them into its moving
/// averages. Fills `cache` when non-null.
inline void forward(const Network& net, const Matrix& x, Mode mode, ForwardCache* cache,
                    Matrix* logits_out, Matrix* features_out, BatchNorm* stats_sink = nullptr) {
  if (x.cols() != net.input_dim())
    throw DimensionMismatch("network: input has " + std::to_string(x.cols()) + " columns, expected " +
                            std::to_string(net.input_dim()));
  const std::size_t n = x.rows();
  Matrix h = x;
  if (cache) {
    cache->inputs.clear();
    cache->xhat.clear();
    cache->inv_std.clear();
    cache->act_in.clear();
  }
  for (std::size_t l = 0; l < net.hidden.size(); ++l) {
    const auto& layer = net.hidden[l];
    Matrix a = matmul(h, layer.weight);
    const std::size_t w = a.cols();
    if (net.batch_norm()) {
      const auto& bn = net.norms[l];
      std::vector<double> mean(w, 0.0), var(w, 0.0), inv(w);
      if (mode == Mode::Train) {
        if (n == 0) throw InvalidInput("batch norm: empty batch");
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) mean[j] += a(i, j);
        for (double& m : mean) m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            double z = a(i, j) - mean[j];
            var[j] += z * z;
          }
        for (double& v : var) v /= static_cast<double>(n);
        if (stats_sink) {
          BatchNorm& s = stats_sink[l];
          for (std::size_t j = 0; j < w; ++j) {
            s.moving_mean[j] = s.momentum * s.moving_mean[j] + (1.0 - s.momentum) * mean[j];
            s.moving_var[j] = s.momentum * s.moving_var[j] + (1.0 - s.momentum) * var[j];
          }
          ++s.updates;
        }
      } else {
        for (std::size_t j = 0; j < w; ++j) {
          mean[j] = bn.running_mean(j);
          var[j] = bn.running_var(j);
        }
      }
      for (std::size_t j = 0; j < w; ++j) inv[j] = 1.0 / std::sqrt(var[j] + bn.epsilon);
      Matrix xh(n, w);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          xh(i, j) = (a(i, j) - mean[j]) * inv[j];
          a(i, j) = bn.gamma[j] * xh(i, j) + bn.beta[j];
        }
      if (cache) {
        cache->xhat.push_back(std::move(xh));
        cache->inv_std.push_back(std::move(inv));
      }
    } else {
      add_row_vector(a, layer.bias);
    }
    if (cache) {
      cache->inputs.push_back(h);
      cache->act_in.push_back(a);
    }
    for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
    if (net.has_skip(l))
      for (std::size_t i = 0; i < a.data().size(); ++i) a.data()[i] += h.data()[i];
    h = std::move(a);
  }
  Matrix logits = matmul(h, net.output.weight);
  add_row_vector(logits, net.output.bias);
  if (cache) {
    cache->features = h;
    cache->logits = logits;
  }
  if (features_out) *features_out = std::move(h);
  if (logits_out) *logits_out = std::move(logits);
}

/// Backpropagates dL/dlogits through a cached training-mode pass. Returns the
/// parameter gradients in a network-shaped container.
inline Network backward(const Network& net, const ForwardCache& cache, const Matrix& dlogits) {
  Network g = zeros_like(net);
  g.output.weight = matmul_tn(cache.features, dlogits);
  for (std::size_t i = 0; i < dlogits.rows(); ++i)
    for (std::size_t j = 0; j < dlogits.cols(); ++j) g.output.bias[j] += dlogits(i, j);
  Matrix dh = matmul_nt(dlogits, net.output.weight);
  for (std::size_t l = net.hidden.size(); l-- > 0;) {
    const Matrix& act_in = cache.act_in[l];
    const std::size_t n = act_in.rows(), w = act_in.cols();
    Matrix dpre(n, w);
    for (std::size_t i = 0; i < dpre.size(); ++i) dpre.data()[i] = act_in.data()[i] > 0.0 ? dh.data()[i] : 0.0;
    if (net.batch_norm()) {
      const auto& bn = net.norms[l];
      const Matrix& xh = cache.xhat[l];
      const auto& inv = cache.inv_std[l];
      std::vector<double> sum_d(w, 0.0), sum_dx(w, 0.0);
      auto& gg = g.norms[l];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double d = dpre(i, j);
          gg.gamma[j] += d * xh(i, j);
          gg.beta[j] += d;
          const double dx = d * bn.gamma[j];
          sum_d[j] += dx;
          sum_dx[j] += dx * xh(i, j);
        }
      const double nn = static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double dx = dpre(i, j) * bn.gamma[j];
          dpre(i, j) = inv[j] / nn * (nn * dx - sum_d[j] - xh(i, j) * sum_dx[j]);
        }
    } else {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) g.hidden[l].bias[j] += dpre(i, j);
    }
    g.hidden[l].weight = matmul_tn(cache.inputs[l], dpre);
    if (l > 0) {
      Matrix din = matmul_nt(dpre, net.hidden[l].weight);
      if (net.has_skip(l))
        for (std::size_t i = 0; i < din.size(); ++i) din.data()[i] += dh.data()[i];
      dh = std::move(din);
    }
  }
  return g;
}

/// Mean cross-entropy of softmax(logits); writes dL/dlogits when asked.
inline double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* dlogits) {
  const std::size_t n = logits.rows();
  if (dlogits) *dlogits = Matrix(n, logits.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.row(i);
    const double lse = log_sum_exp(row);
    const auto y = static_cast<std::size_t>(labels[i]);
    loss += lse - row[y];
    if (dlogits) {
      for (std::size_t j = 0; j < row.size(); ++j)
        (*dlogits)(i, j) = std::exp(row[j] - lse) / static_cast<double>(n);
      (*dlogits)(i, y) -= 1.0 / static_cast<double>(n);
    }
  }
  return loss / static_cast<double>(n);
}

/// Row-wise softmax of a logit matrix.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto s = softmax(logits.row(i));
    std::copy(s.begin(), s.end(), p.row(i).begin());
  }
  return p;
}

/// Adam with bias-corrected moments.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<std::span<double>>& params, const std::vector<std::span<double>>& grads) {
    if (m_.empty()) {
      for (auto p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t b = 0; b < params.size(); ++b) {
      auto p = params[b];
      auto g = grads[b];
      auto& m = m_[b];
      auto& v = v_[b];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  std::uint64_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Persistent power-iteration state for one weight matrix; `normalize`
/// performs one iteration and divides the matrix by its estimate when the
/// estimate exceeds one.
class SpectralNormalizer {
 public:
  SpectralNormalizer(const Matrix& w, Rng& rng, std::size_t warmup = 30) : u_(w.rows()), v_(w.cols()) {
    for (double& x : u_) x = rng.normal();
    for (std::size_t i = 0; i < warmup; ++i) estimate(w);
  }

  double estimate(const Matrix& w) {
    // v = W^T u, u = W v
    std::fill(v_.begin(), v_.end(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      const double ui = u_[i];
      auto r = w.row(i);
      for (std::size_t j = 0; j < w.cols(); ++j) v_[j] += ui * r[j];
    }
    const double vn = norm2(v_);
    if (vn == 0.0) return 0.0;
    for (double& x : v_) x /= vn;
    for (std::size_t i = 0; i < w.rows(); ++i) u_[i] = dot(w.row(i), v_);
    const double sigma = norm2(u_);
    if (sigma == 0.0) return 0.0;
    for (double& x : u_) x /= sigma;
    return sigma;
  }

  double normalize(Matrix& w) {
    const double sigma = estimate(w);
    if (sigma > 1.0)
      for (double& x : w.data()) x /= sigma;
    return sigma;
  }

 private:
  std::vector<double> u_, v_;
};

// ---------------------------------------------------------------------------
// Dump helpers

inline void write_network(DumpWriter& w, const std::string& prefix, const Network& net) {
  w.integer(prefix + ".hidden", static_cast<std::int64_t>(net.hidden.size()));
  w.integer(prefix + ".batch_norm", net.batch_norm() ? 1 : 0);
  w.integer(prefix + ".residual", net.residual ? 1 : 0);
  for (std::size_t l = 0; l < net.hidden.size(); ++l) {
    const std::string p = prefix + ".h" + std::to_string(l);
    w.matrix(p + ".w", net.hidden[l].weight);
    w.values(p + ".b", net.hidden[l].bias);
    if (net.batch_norm()) {
      const auto& bn = net.norms[l];
      w.values(p + ".gamma", bn.gamma);
      w.values(p + ".beta", bn.beta);
      w.values(p + ".moving_mean", bn.moving_mean);
      w.values(p + ".moving_var", bn.moving_var);
      w.integer(p + ".updates", static_cast<std::int64_t>(bn.updates));
      w.value(p + ".momentum", bn.momentum);
      w.value(p + ".epsilon", bn.epsilon);
    }
  }
  w.matrix(prefix + ".out.w", net.output.weight);
  w.values(prefix + ".out.b", net.output.bias);
}

inline Network read_network(const DumpReader& r, const std::string& prefix) {
  Network net;
  const auto layers = static_cast<std::size_t>(r.integer(prefix + ".hidden"));
  const bool bn_on = r.integer(prefix + ".batch_norm") != 0;
  net.residual = r.integer(prefix + ".residual") != 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string p = prefix + ".h" + std::to_string(l);
    net.hidden.push_back(DenseLayer{r.matrix(p + ".w"), r.values(p + ".b")});
    if (bn_on) {
      BatchNorm bn;
      bn.gamma = r.values(p + ".gamma");
      bn.beta = r.values(p + ".beta");
      bn.moving_mean = r.values(p + ".moving_mean");
      bn.moving_var = r.values(p + ".moving_var");
      bn.updates = static_cast<std::uint64_t>(r.integer(p + ".updates"));
      bn.momentum = r.value(p + ".momentum");
      bn.epsilon = r.value(p + ".epsilon");
      net.norms.push_back(std::move(bn));
    }
  }
  net.output = DenseLayer{r.matrix(prefix + ".out.w"), r.values(prefix + ".out.b")};
  return net;
}

}  // namespace flowuq::nn
