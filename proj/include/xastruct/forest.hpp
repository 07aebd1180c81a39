#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "json.hpp"
#include "xastruct/random.hpp"

namespace xastruct::forest {

/// Row-major [n, d] feature matrix.
struct FeatureMatrix {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols)
      : n(rows), d(cols), values(rows * cols, 0.0) {}

  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * d, d};
  }
  std::span<double> row(std::size_t i) { return {values.data() + i * d, d}; }
  void AppendRow(std::span<const double> r);
};

struct ForestConfig {
  int n_trees = 100;
  int max_features = 0;  // 0 means floor(sqrt(d)), at least 1
  int max_depth = 16;    // use kUnlimitedDepth for fully grown trees
  int min_samples_leaf = 2;
  bool bootstrap = true;
  std::uint64_t seed = 0;

  static constexpr int kUnlimitedDepth = std::numeric_limits<int>::max();
};

/// Internal nodes have feature >= 0 and route x[feature] <= threshold left.
/// Leaves have feature == -1 and a class histogram of routed training rows.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::vector<double> histogram;

  bool is_leaf() const { return feature < 0; }
};

class DecisionTree {
 public:
  DecisionTree() = default;
  /// Builds a tree from explicit nodes (node 0 is the root).
  DecisionTree(std::vector<TreeNode> nodes, std::size_t n_classes);

  /// Grows a tree on the given rows of (x, y), with duplicates allowed.
  static DecisionTree Fit(const FeatureMatrix& x, std::span<const int> y,
                          std::span<const std::size_t> rows,
                          std::size_t n_classes, const ForestConfig& cfg,
                          Rng& rng);

  /// Normalized histogram of the leaf reached by `x`.
  std::vector<double> PredictProba(std::span<const double> x) const;

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t n_classes() const { return n_classes_; }
  int depth() const;

 private:
  std::vector<TreeNode> nodes_;
  std::size_t n_classes_ = 0;
};

class RandomForest {
 public:
  RandomForest() = default;
  RandomForest(std::vector<DecisionTree> trees, std::size_t n_features,
               std::size_t n_classes, ForestConfig cfg = {});

  /// Requires n >= 2 and labels in [0, n_classes). A single-class y yields a
  /// forest that always predicts that class.
  static RandomForest Fit(const FeatureMatrix& x, std::span<const int> y,
                          std::size_t n_classes, const ForestConfig& cfg);

  /// Average of the per-tree leaf distributions. Throws
  /// Error(kLengthMismatch) if x has the wrong length.
  std::vector<double> PredictProba(std::span<const double> x) const;
  /// Argmax of PredictProba, lowest class index on ties.
  int Predict(std::span<const double> x) const;

  std::size_t n_features() const { return n_features_; }
  std::size_t n_classes() const { return n_classes_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }
  const ForestConfig& config() const { return cfg_; }

  nlohmann::json ToJson() const;
  static RandomForest FromJson(const nlohmann::json& j);

 private:
  std::vector<DecisionTree> trees_;
  std::size_t n_features_ = 0;
  std::size_t n_classes_ = 0;
  ForestConfig cfg_;
};

}  // namespace xastruct::forest
