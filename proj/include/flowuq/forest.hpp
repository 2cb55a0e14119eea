#pragma once

// Random forest of CART trees (Gini impurity, bootstrap resampling). Each
// tree exposes its Laplace-smoothed leaf distribution, so the forest is an
// ensemble that the entropy decomposition applies to directly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <span>
#include <optional>
#include <ostream>
#include <vector>

#include "flowuq/flow_data.hpp"
#include "flowuq/serialize.hpp"
#include "flowuq/uncertainty.hpp"

namespace flowuq {

enum class FeatureSubset { Sqrt, All };

struct ForestConfig {
  std::size_t num_trees = 25;
  std::optional<std::size_t> max_depth;   // unlimited when unset
  std::size_t min_samples_split = 2;
  FeatureSubset features_per_split = FeatureSubset::Sqrt;
  bool bootstrap = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_trees == 0) throw ConfigError("forest: need at least one tree");
    if (min_samples_split < 2) throw ConfigError("forest: min_samples_split must be >= 2");
  }
};

struct TreeNode {
  std::int32_t feature = -1;   // -1 marks a leaf
  double threshold = 0.0;      // x[feature] <= threshold goes left
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::int32_t leaf = -1;      // row of the tree's leaf-count table
};

struct DecisionTree {
  std::vector<TreeNode> nodes;
  std::vector<std::uint32_t> leaf_counts;   // num_leaves x K

  const TreeNode& leaf_for(std::span<const double> x) const {
    const TreeNode* node = &nodes.front();
    while (node->feature >= 0)
      node = &nodes[static_cast<std::size_t>(x[static_cast<std::size_t>(node->feature)] <= node->threshold
                                                 ? node->left
                                                 : node->right)];
    return *node;
  }

  std::size_t depth() const {
    std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
    std::size_t best = 0;
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (nodes[i].feature >= 0) {
        stack.emplace_back(static_cast<std::size_t>(nodes[i].left), d + 1);
        stack.emplace_back(static_cast<std::size_t>(nodes[i].right), d + 1);
      }
    }
    return best;
  }

  bool operator==(const DecisionTree& o) const {
    if (leaf_counts != o.leaf_counts || nodes.size() != o.nodes.size()) return false;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto &a = nodes[i], &b = o.nodes[i];
      if (a.feature != b.feature || a.threshold != b.threshold || a.left != b.left || a.right != b.right ||
          a.leaf != b.leaf)
        return false;
    }
    return true;
  }
};

class TrainedForest {
 public:
  ForestConfig config;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<DecisionTree> trees;

  /// (count_k + 1) / (total + K) of the leaf reached in `tree`.
  ProbVector member(std::size_t tree, std::span<const double> x) const {
    const auto& t = trees[tree];
    const auto& leaf = t.leaf_for(x);
    const std::uint32_t* counts = t.leaf_counts.data() + static_cast<std::size_t>(leaf.leaf) * num_classes;
    double total = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) total += counts[k];
    ProbVector p(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k)
      p[k] = (counts[k] + 1.0) / (total + static_cast<double>(num_classes));
    return p;
  }

  bool operator==(const TrainedForest& o) const {
    return input_dim == o.input_dim && num_classes == o.num_classes && trees == o.trees;
  }
};

/// One member distribution per tree, in tree order.
inline EnsemblePrediction forest_members(const TrainedForest& f, std::span<const double> x) {
  if (x.size() != f.input_dim) throw DimensionMismatch("forest: input dimension mismatch");
  EnsemblePrediction e;
  e.members.reserve(f.trees.size());
  for (std::size_t t = 0; t < f.trees.size(); ++t) e.members.push_back(f.member(t, x));
  return e;
}

/// Argmax of the mean member distribution for every row.
inline std::vector<int> forest_predict_labels(const TrainedForest& f, const Matrix& x) {
  std::vector<int> y(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) y[i] = static_cast<int>(argmax(forest_members(f, x.row(i)).mean()));
  return y;
}

namespace detail {

struct TreeBuilder {
  const std::vector<std::vector<double>>& columns;   // feature-major copy of X
  const std::vector<int>& labels;
  std::size_t num_classes;
  std::size_t features_per_split;
  std::optional<std::size_t> max_depth;
  std::size_t min_samples_split;

  DecisionTree tree;

  struct Task {
    std::size_t node;
    std::vector<std::uint32_t> samples;
    std::size_t depth;
    std::uint64_t seed;
  };

  struct Split {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double score = 0.0;   // sum_k l_k^2 / n_l + sum_k r_k^2 / n_r, maximized
  };

  std::vector<std::uint32_t> class_counts(const std::vector<std::uint32_t>& samples) const {
    std::vector<std::uint32_t> c(num_classes, 0);
    for (auto s : samples) ++c[static_cast<std::size_t>(labels[s])];
    return c;
  }

  void best_split_on(std::size_t feature, const std::vector<std::uint32_t>& samples,
                     const std::vector<std::uint32_t>& totals, Split& best,
                     std::vector<std::pair<double, int>>& buf) const {
    const auto& col = columns[feature];
    buf.clear();
    for (auto s : samples) buf.emplace_back(col[s], labels[s]);
    std::sort(buf.begin(), buf.end());
    if (buf.front().first == buf.back().first) return;
    std::vector<double> left(num_classes, 0.0), right(totals.begin(), totals.end());
    double sq_left = 0.0, sq_right = 0.0;
    for (double r : right) sq_right += r * r;
    const double n = static_cast<double>(buf.size());
    for (std::size_t i = 0; i + 1 < buf.size(); ++i) {
      const auto c = static_cast<std::size_t>(buf[i].second);
      sq_left += 2.0 * left[c] + 1.0;
      sq_right -= 2.0 * right[c] - 1.0;
      left[c] += 1.0;
      right[c] -= 1.0;
      if (buf[i].first == buf[i + 1].first) continue;
      const double nl = static_cast<double>(i + 1);
      const double score = sq_left / nl + sq_right / (n - nl);
      if (!best.found || score > best.score) {
        double mid = 0.5 * (buf[i].first + buf[i + 1].first);
        if (mid >= buf[i + 1].first) mid = buf[i].first;
        best = {true, feature, mid, score};
      }
    }
  }

  void make_leaf(std::size_t node, const std::vector<std::uint32_t>& counts) {
    tree.nodes[node].feature = -1;
    tree.nodes[node].leaf = static_cast<std::int32_t>(tree.leaf_counts.size() / num_classes);
    tree.leaf_counts.insert(tree.leaf_counts.end(), counts.begin(), counts.end());
  }

  /// Depth-first growth. Every node draws its candidate features from its
  /// own generator seeded from the parent's, so limiting depth prunes a tree
  /// without changing the splits above the limit.
  void grow(std::vector<std::uint32_t> root_samples, std::uint64_t seed) {
    const std::size_t d = columns.size();
    tree.nodes.emplace_back();
    std::vector<Task> stack;
    stack.push_back({0, std::move(root_samples), 0, seed});
    std::vector<std::pair<double, int>> buf;
    std::vector<std::size_t> feats(d);
    while (!stack.empty()) {
      Task task = std::move(stack.back());
      stack.pop_back();
      auto counts = class_counts(task.samples);
      const bool pure = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;
      if (pure || task.samples.size() < min_samples_split || (max_depth && task.depth >= *max_depth)) {
        make_leaf(task.node, counts);
        continue;
      }
      std::iota(feats.begin(), feats.end(), std::size_t{0});
      Rng rng(task.seed);
      if (features_per_split < d) rng.shuffle(feats.begin(), feats.end());
      Split best;
      for (std::size_t f = 0; f < d; ++f) {
        if (f >= features_per_split && best.found) break;
        best_split_on(feats[f], task.samples, counts, best, buf);
      }
      if (!best.found) {
        make_leaf(task.node, counts);
        continue;
      }
      std::vector<std::uint32_t> left, right;
      const auto& col = columns[best.feature];
      for (auto s : task.samples) (col[s] <= best.threshold ? left : right).push_back(s);
      const auto li = tree.nodes.size();
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      TreeNode& node = tree.nodes[task.node];
      node.feature = static_cast<std::int32_t>(best.feature);
      node.threshold = best.threshold;
      node.left = static_cast<std::int32_t>(li);
      node.right = static_cast<std::int32_t>(li + 1);
      stack.push_back({li + 1, std::move(right), task.depth + 1, splitmix64(task.seed ^ 0xA5A5A5A5ULL)});
      stack.push_back({li, std::move(left), task.depth + 1, splitmix64(task.seed ^ 0x5A5A5A5AULL)});
    }
  }
};

}  // namespace detail

inline TrainedForest train_forest(const FlowDataset& train, const ForestConfig& cfg) {
  cfg.validate();
  train.validate();
  if (train.empty()) throw EmptyDataset("forest: training set is empty");
  if (train.num_classes() < 2) throw InvalidInput("forest: need at least two classes");
  const std::size_t n = train.size(), d = train.dim();
  if (n > std::numeric_limits<std::uint32_t>::max()) throw InvalidInput("forest: too many rows");

  std::vector<std::vector<double>> columns(d, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) columns[j][i] = train.features(i, j);

  const std::size_t mtry = cfg.features_per_split == FeatureSubset::All
                               ? d
                               : std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d)))));
  TrainedForest forest;
  forest.config = cfg;
  forest.input_dim = d;
  forest.num_classes = train.num_classes();
  Rng root(cfg.seed);
  for (std::size_t t = 0; t < cfg.num_trees; ++t) {
    Rng tree_rng = root.split(t);
    std::vector<std::uint32_t> samples(n);
    if (cfg.bootstrap) {
      for (auto& s : samples) s = static_cast<std::uint32_t>(tree_rng.index(n));
    } else {
      std::iota(samples.begin(), samples.end(), 0u);
    }
    detail::TreeBuilder b{columns, train.labels, forest.num_classes, mtry, cfg.max_depth, cfg.min_samples_split, {}};
    b.grow(std::move(samples), tree_rng.engine()());
    forest.trees.push_back(std::move(b.tree));
  }
  return forest;
}

// ---------------------------------------------------------------------------
// Dump: flowuq-forest version 1. Node arrays per tree.

inline void save_forest(std::ostream& os, const TrainedForest& f) {
  DumpWriter w(os, "forest", 1);
  const auto& c = f.config;
  w.integer("config.num_trees", static_cast<std::int64_t>(c.num_trees));
  w.integer("config.max_depth", c.max_depth ? static_cast<std::int64_t>(*c.max_depth) : -1);
  w.integer("config.min_samples_split", static_cast<std::int64_t>(c.min_samples_split));
  w.integer("config.features_all", c.features_per_split == FeatureSubset::All);
  w.integer("config.bootstrap", c.bootstrap);
  w.text("config.seed", std::to_string(c.seed));
  w.integer("input_dim", static_cast<std::int64_t>(f.input_dim));
  w.integer("num_classes", static_cast<std::int64_t>(f.num_classes));
  w.integer("trees", static_cast<std::int64_t>(f.trees.size()));
  for (std::size_t t = 0; t < f.trees.size(); ++t) {
    const auto& tree = f.trees[t];
    const std::string p = "t" + std::to_string(t);
    std::vector<std::int32_t> feature, left, right, leaf;
    std::vector<double> threshold;
    for (const auto& nd : tree.nodes) {
      feature.push_back(nd.feature);
      left.push_back(nd.left);
      right.push_back(nd.right);
      leaf.push_back(nd.leaf);
      threshold.push_back(nd.threshold);
    }
    w.integers<std::int32_t>(p + ".feature", feature);
    w.values(p + ".threshold", threshold);
    w.integers<std::int32_t>(p + ".left", left);
    w.integers<std::int32_t>(p + ".right", right);
    w.integers<std::int32_t>(p + ".leaf", leaf);
    w.integers<std::uint32_t>(p + ".counts", tree.leaf_counts);
  }
}

inline TrainedForest load_forest(std::istream& is) {
  DumpReader r(is, "forest", 1);
  TrainedForest f;
  auto& c = f.config;
  c.num_trees = static_cast<std::size_t>(r.integer("config.num_trees"));
  const auto md = r.integer("config.max_depth");
  if (md >= 0) c.max_depth = static_cast<std::size_t>(md);
  c.min_samples_split = static_cast<std::size_t>(r.integer("config.min_samples_split"));
  c.features_per_split = r.integer("config.features_all") ? FeatureSubset::All : FeatureSubset::Sqrt;
  c.bootstrap = r.integer("config.bootstrap") != 0;
  c.seed = std::stoull(r.text("config.seed"));
  f.input_dim = static_cast<std::size_t>(r.integer("input_dim"));
  f.num_classes = static_cast<std::size_t>(r.integer("num_classes"));
  const auto trees = static_cast<std::size_t>(r.integer("trees"));
  for (std::size_t t = 0; t < trees; ++t) {
    const std::string p = "t" + std::to_string(t);
    auto feature = r.integers<std::int32_t>(p + ".feature");
    auto threshold = r.values(p + ".threshold");
    auto left = r.integers<std::int32_t>(p + ".left");
    auto right = r.integers<std::int32_t>(p + ".right");
    auto leaf = r.integers<std::int32_t>(p + ".leaf");
    DecisionTree tree;
    for (std::size_t i = 0; i < feature.size(); ++i)
      tree.nodes.push_back({feature[i], threshold.at(i), left.at(i), right.at(i), leaf.at(i)});
    tree.leaf_counts = r.integers<std::uint32_t>(p + ".counts");
    f.trees.push_back(std::move(tree));
  }
  return f;
}

}  // namespace flowuq
