#pragma once

// Pool-based active learning with an oracle that reveals held-out labels.

#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "flowuq/evaluation.hpp"
#include "flowuq/flow_data.hpp"

namespace flowuq {

enum class AlStrategy { Bald, Total, Random };

inline std::string to_string(AlStrategy s) {
  switch (s) {
    case AlStrategy::Bald: return "bald";
    case AlStrategy::Total: return "total";
    case AlStrategy::Random: return "random";
  }
  return "?";
}

inline AlStrategy parse_strategy(const std::string& s) {
  const auto l = detail::lower(s);
  if (l == "bald") return AlStrategy::Bald;
  if (l == "total") return AlStrategy::Total;
  if (l == "random") return AlStrategy::Random;
  throw ConfigError("unknown acquisition strategy '" + s + "'");
}

struct AlConfig {
  std::size_t initial_size = 500;
  std::size_t acquisition_size = 500;
  AlStrategy strategy = AlStrategy::Bald;
  std::size_t max_rounds = std::numeric_limits<std::size_t>::max();
  std::optional<double> target_f1;
  bool retrain_from_scratch = true;
  std::uint64_t seed = 0;
};

struct AlRecord {
  std::size_t round = 0;
  std::size_t labeled_size = 0;
  double fraction = 0.0;   // labeled_size / pool size
  double f1_macro = 0.0;
};

struct AlTrace {
  std::vector<AlRecord> records;
  /// Pool indices labeled in each round; entry 0 is the initial subset.
  std::vector<std::vector<std::size_t>> acquired;
};

inline void write_trace_csv(std::ostream& os, const AlTrace& t) {
  os << "round,labeled_size,fraction,f1_macro\n";
  for (const auto& r : t.records)
    os << r.round << ',' << r.labeled_size << ',' << format_double(r.fraction) << ',' << format_double(r.f1_macro) << '\n';
}

/// Labeled-set size of the first round whose macro F1 reaches `target`.
inline std::optional<std::size_t> samples_to_reach(const AlTrace& t, double target) {
  for (const auto& r : t.records)
    if (r.f1_macro >= target) return r.labeled_size;
  return std::nullopt;
}

/// Indices of the `batch` largest scores (ties to the lower index) or, for
/// the random strategy, a seeded uniform sample. Returned sorted ascending.
inline std::vector<std::size_t> acquire(std::span<const double> pool_scores, std::size_t batch, AlStrategy strategy,
                                        std::uint64_t seed) {
  const std::size_t n = pool_scores.size();
  if (batch > n) throw InvalidInput("acquire: batch larger than the pool");
  std::vector<std::size_t> idx;
  if (strategy == AlStrategy::Random) {
    Rng rng(seed);
    idx = rng.sample_without_replacement(n, batch);
  } else {
    require_finite(pool_scores, "acquire");
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(batch), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        return pool_scores[a] > pool_scores[b] || (pool_scores[a] == pool_scores[b] && a < b);
                      });
    idx.resize(batch);
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// A model the loop can retrain and query.
class Learner {
 public:
  virtual ~Learner() = default;
  /// Trains on `train`. With `warm` the previous fit may serve as the start.
  virtual void fit(const FlowDataset& train, std::uint64_t seed, bool warm) = 0;
  virtual std::vector<int> predict(const Matrix& x) const = 0;
  virtual bool supports(AlStrategy s) const = 0;
  /// Acquisition scores (larger = more informative) for every row.
  virtual std::vector<double> scores(const Matrix& x, AlStrategy s, std::uint64_t seed) const = 0;
};

using LearnerFactory = std::function<std::unique_ptr<Learner>()>;

inline AlTrace run_loop(const LearnerFactory& factory, const FlowDataset& pool, const FlowDataset& test,
                        const AlConfig& cfg) {
  pool.validate();
  test.validate();
  const std::size_t n = pool.size();
  if (n == 0) throw EmptyDataset("active learning: empty pool");
  if (test.empty()) throw EmptyDataset("active learning: empty test set");
  if (pool.dim() != test.dim() || pool.class_names != test.class_names)
    throw DimensionMismatch("active learning: pool and test schemas differ");
  if (cfg.initial_size < pool.num_classes()) throw ConfigError("active learning: initial_size must be >= K");
  if (cfg.initial_size > n) throw ConfigError("active learning: initial_size exceeds the pool");
  if (cfg.acquisition_size == 0) throw ConfigError("active learning: acquisition_size must be >= 1");

  auto learner = factory();
  if (cfg.strategy != AlStrategy::Random && !learner->supports(cfg.strategy))
    throw CapabilityError("active learning: model cannot score strategy " + to_string(cfg.strategy));

  const Rng root(cfg.seed);
  std::vector<char> labeled(n, 0);
  std::vector<std::size_t> labeled_idx;
  AlTrace trace;

  auto initial = Rng(root.split(0)).sample_without_replacement(n, cfg.initial_size);
  std::sort(initial.begin(), initial.end());

  auto reveal = [&](const std::vector<std::size_t>& idx) {
    for (auto i : idx) {
      if (labeled[i]) throw Error("active learning: index acquired twice");
      labeled[i] = 1;
      labeled_idx.push_back(i);
    }
    trace.acquired.push_back(idx);
  };

  auto train_and_record = [&](std::size_t round) {
    if (round > 0 && cfg.retrain_from_scratch) learner = factory();
    std::vector<std::size_t> rows(labeled_idx);
    std::sort(rows.begin(), rows.end());
    learner->fit(pool.subset(rows), root.split(1000 + round).seed(), round > 0 && !cfg.retrain_from_scratch);
    const auto pred = learner->predict(test.features);
    AlRecord rec;
    rec.round = round;
    rec.labeled_size = labeled_idx.size();
    rec.fraction = static_cast<double>(rec.labeled_size) / static_cast<double>(n);
    rec.f1_macro = classification_metrics(pred, test.labels, pool.num_classes()).f1_macro;
    trace.records.push_back(rec);
    return rec;
  };

  reveal(initial);
  auto rec = train_and_record(0);
  for (std::size_t round = 1;; ++round) {
    if (cfg.target_f1 && rec.f1_macro >= *cfg.target_f1) break;
    if (round > cfg.max_rounds || labeled_idx.size() == n) break;
    std::vector<std::size_t> remaining;
    remaining.reserve(n - labeled_idx.size());
    for (std::size_t i = 0; i < n; ++i)
      if (!labeled[i]) remaining.push_back(i);
    const std::size_t batch = std::min(cfg.acquisition_size, remaining.size());
    std::vector<double> s(remaining.size(), 0.0);
    if (cfg.strategy != AlStrategy::Random)
      s = learner->scores(select_rows(pool.features, remaining), cfg.strategy, root.split(2000 + round).seed());
    auto picked = acquire(s, batch, cfg.strategy, root.split(3000 + round).seed());
    for (auto& p : picked) p = remaining[p];
    reveal(picked);
    rec = train_and_record(round);
  }
  return trace;
}

}  // namespace flowuq
