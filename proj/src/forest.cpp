#include "xastruct/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xastruct/error.hpp"

namespace xastruct::forest {
namespace {

double Gini(std::span<const double> counts, double total) {
  if (total <= 0.0) return 0.0;
  double s = 0.0;
  for (double c : counts) s += (c / total) * (c / total);
  return 1.0 - s;
}

struct Split {
  bool valid = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = -std::numeric_limits<double>::infinity();
};

class TreeBuilder {
 public:
  TreeBuilder(const FeatureMatrix& x, std::span<const int> y,
              std::size_t n_classes, const ForestConfig& cfg, Rng& rng)
      : x_(x), y_(y), n_classes_(n_classes), cfg_(cfg), rng_(rng) {
    max_features_ = cfg.max_features > 0
                        ? static_cast<std::size_t>(cfg.max_features)
                        : static_cast<std::size_t>(
                              std::floor(std::sqrt(static_cast<double>(x.d))));
    max_features_ = std::clamp<std::size_t>(max_features_, 1, x.d);
  }

  std::vector<TreeNode> Build(std::vector<std::size_t> rows) {
    Grow(std::move(rows), 0);
    return std::move(nodes_);
  }

 private:
  std::vector<double> Histogram(std::span<const std::size_t> rows) const {
    std::vector<double> h(n_classes_, 0.0);
    for (std::size_t r : rows) h[static_cast<std::size_t>(y_[r])] += 1.0;
    return h;
  }

  int Grow(std::vector<std::size_t> rows, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    auto hist = Histogram(rows);
    const bool pure =
        std::count_if(hist.begin(), hist.end(), [](double c) { return c > 0; }) <= 1;
    const auto min_leaf = static_cast<std::size_t>(std::max(1, cfg_.min_samples_leaf));
    Split split;
    if (!pure && depth < cfg_.max_depth && rows.size() >= 2 * min_leaf) {
      split = FindSplit(rows, hist, min_leaf);
    }
    if (!split.valid) {
      nodes_[id].histogram = std::move(hist);
      return id;
    }
    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) {
      (x_.row(r)[split.feature] <= split.threshold ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = Grow(std::move(left), depth + 1);
    const int r = Grow(std::move(right), depth + 1);
    nodes_[id].feature = split.feature;
    nodes_[id].threshold = split.threshold;
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  // Examines max_features random features; keeps drawing past that budget
  // only while no valid partition has been found. Among candidates the
  // highest gain wins, then the lowest feature index, then the lowest
  // threshold.
  Split FindSplit(std::span<const std::size_t> rows,
                  const std::vector<double>& parent_hist,
                  std::size_t min_leaf) {
    std::vector<std::size_t> features(x_.d);
    std::iota(features.begin(), features.end(), 0);
    rng_.Shuffle(std::span<std::size_t>(features));

    const double total = static_cast<double>(rows.size());
    const double parent_gini = Gini(parent_hist, total);
    std::vector<std::pair<double, int>> column(rows.size());
    std::vector<double> left(n_classes_), right(n_classes_);
    Split best;
    for (std::size_t fi = 0; fi < features.size(); ++fi) {
      if (fi >= max_features_ && best.valid) break;
      const int f = static_cast<int>(features[fi]);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        column[i] = {x_.row(rows[i])[f], y_[rows[i]]};
      }
      std::sort(column.begin(), column.end());
      std::fill(left.begin(), left.end(), 0.0);
      right = parent_hist;
      for (std::size_t i = 0; i + 1 < column.size(); ++i) {
        const auto cls = static_cast<std::size_t>(column[i].second);
        left[cls] += 1.0;
        right[cls] -= 1.0;
        const std::size_t n_left = i + 1;
        const std::size_t n_right = column.size() - n_left;
        if (column[i].first == column[i + 1].first) continue;
        if (n_left < min_leaf || n_right < min_leaf) continue;
        const double nl = static_cast<double>(n_left);
        const double nr = static_cast<double>(n_right);
        const double gain = parent_gini - (nl / total) * Gini(left, nl) -
                            (nr / total) * Gini(right, nr);
        const double threshold = 0.5 * (column[i].first + column[i + 1].first);
        const bool better =
            !best.valid || gain > best.gain ||
            (gain == best.gain &&
             (f < best.feature || (f == best.feature && threshold < best.threshold)));
        if (better) best = {true, f, threshold, gain};
      }
    }
    return best;
  }

  const FeatureMatrix& x_;
  std::span<const int> y_;
  std::size_t n_classes_;
  const ForestConfig& cfg_;
  Rng& rng_;
  std::size_t max_features_ = 1;
  std::vector<TreeNode> nodes_;
};

int Argmax(std::span<const double> p) {
  int best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace

void FeatureMatrix::AppendRow(std::span<const double> r) {
  if (n == 0 && d == 0) d = r.size();
  if (r.size() != d) {
    throw Error(ErrorCode::kLengthMismatch,
                "feature row has " + std::to_string(r.size()) + " values, expected " +
                    std::to_string(d));
  }
  values.insert(values.end(), r.begin(), r.end());
  ++n;
}

DecisionTree::DecisionTree(std::vector<TreeNode> nodes, std::size_t n_classes)
    : nodes_(std::move(nodes)), n_classes_(n_classes) {
  if (nodes_.empty()) throw Error(ErrorCode::kShape, "tree has no nodes");
  for (const auto& node : nodes_) {
    if (node.is_leaf()) {
      if (node.histogram.size() != n_classes_) {
        throw Error(ErrorCode::kShape, "leaf histogram has wrong class count");
      }
    } else if (node.left < 0 || node.right < 0 ||
               node.left >= static_cast<int>(nodes_.size()) ||
               node.right >= static_cast<int>(nodes_.size())) {
      throw Error(ErrorCode::kShape, "internal node with invalid children");
    }
  }
}

DecisionTree DecisionTree::Fit(const FeatureMatrix& x, std::span<const int> y,
                               std::span<const std::size_t> rows,
                               std::size_t n_classes, const ForestConfig& cfg,
                               Rng& rng) {
  TreeBuilder builder(x, y, n_classes, cfg, rng);
  return DecisionTree(builder.Build({rows.begin(), rows.end()}), n_classes);
}

std::vector<double> DecisionTree::PredictProba(std::span<const double> x) const {
  int id = 0;
  while (!nodes_[id].is_leaf()) {
    const auto& node = nodes_[id];
    id = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left
                                                                      : node.right;
  }
  std::vector<double> p = nodes_[id].histogram;
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (total > 0.0) {
    for (double& v : p) v /= total;
  }
  return p;
}

int DecisionTree::depth() const {
  std::vector<int> d(nodes_.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    best = std::max(best, d[i]);
    if (!nodes_[i].is_leaf()) {
      d[nodes_[i].left] = d[i] + 1;
      d[nodes_[i].right] = d[i] + 1;
    }
  }
  return best;
}

RandomForest::RandomForest(std::vector<DecisionTree> trees,
                           std::size_t n_features, std::size_t n_classes,
                           ForestConfig cfg)
    : trees_(std::move(trees)),
      n_features_(n_features),
      n_classes_(n_classes),
      cfg_(cfg) {
  if (trees_.empty()) throw Error(ErrorCode::kShape, "forest needs >= 1 tree");
}

RandomForest RandomForest::Fit(const FeatureMatrix& x, std::span<const int> y,
                               std::size_t n_classes, const ForestConfig& cfg) {
  if (x.n < 2 || y.size() != x.n) {
    throw Error(ErrorCode::kInsufficientData,
                "forest needs >= 2 rows with matching labels");
  }
  if (cfg.n_trees < 1) throw Error(ErrorCode::kShape, "n_trees must be >= 1");
  for (int label : y) {
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes) {
      throw Error(ErrorCode::kLabel, "class label " + std::to_string(label) +
                                         " outside [0, " +
                                         std::to_string(n_classes) + ")");
    }
  }
  Rng root(cfg.seed);
  std::vector<DecisionTree> trees;
  trees.reserve(static_cast<std::size_t>(cfg.n_trees));
  for (int t = 0; t < cfg.n_trees; ++t) {
    Rng rng = root.Fork(static_cast<std::uint64_t>(t));
    std::vector<std::size_t> rows(x.n);
    if (cfg.bootstrap) {
      for (auto& r : rows) r = rng.Below(x.n);
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    trees.push_back(DecisionTree::Fit(x, y, rows, n_classes, cfg, rng));
  }
  return RandomForest(std::move(trees), x.d, n_classes, cfg);
}

std::vector<double> RandomForest::PredictProba(std::span<const double> x) const {
  if (x.size() != n_features_) {
    throw Error(ErrorCode::kLengthMismatch,
                "forest expects " + std::to_string(n_features_) +
                    " features, got " + std::to_string(x.size()));
  }
  std::vector<double> p(n_classes_, 0.0);
  for (const auto& tree : trees_) {
    const auto tp = tree.PredictProba(x);
    for (std::size_t c = 0; c < n_classes_; ++c) p[c] += tp[c];
  }
  for (double& v : p) v /= static_cast<double>(trees_.size());
  return p;
}

int RandomForest::Predict(std::span<const double> x) const {
  return Argmax(PredictProba(x));
}

nlohmann::json RandomForest::ToJson() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& tree : trees_) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : tree.nodes()) {
      if (n.is_leaf()) {
        nodes.push_back({{"leaf", n.histogram}});
      } else {
        nodes.push_back({{"feature", n.feature},
                         {"threshold", n.threshold},
                         {"left", n.left},
                         {"right", n.right}});
      }
    }
    trees.push_back(std::move(nodes));
  }
  return {{"config",
           {{"n_trees", cfg_.n_trees},
            {"max_features", cfg_.max_features},
            {"max_depth", cfg_.max_depth},
            {"min_samples_leaf", cfg_.min_samples_leaf},
            {"bootstrap", cfg_.bootstrap},
            {"seed", cfg_.seed},
            {"n_features", n_features_},
            {"n_classes", n_classes_}}},
          {"trees", std::move(trees)}};
}

RandomForest RandomForest::FromJson(const nlohmann::json& j) {
  try {
    const auto& c = j.at("config");
    ForestConfig cfg;
    cfg.n_trees = c.at("n_trees").get<int>();
    cfg.max_features = c.at("max_features").get<int>();
    cfg.max_depth = c.at("max_depth").get<int>();
    cfg.min_samples_leaf = c.at("min_samples_leaf").get<int>();
    cfg.bootstrap = c.at("bootstrap").get<bool>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    const auto n_features = c.at("n_features").get<std::size_t>();
    const auto n_classes = c.at("n_classes").get<std::size_t>();
    std::vector<DecisionTree> trees;
    for (const auto& jt : j.at("trees")) {
      std::vector<TreeNode> nodes;
      for (const auto& jn : jt) {
        TreeNode n;
        if (jn.contains("leaf")) {
          n.histogram = jn.at("leaf").get<std::vector<double>>();
        } else {
          n.feature = jn.at("feature").get<int>();
          n.threshold = jn.at("threshold").get<double>();
          n.left = jn.at("left").get<int>();
          n.right = jn.at("right").get<int>();
        }
        nodes.push_back(std::move(n));
      }
      trees.emplace_back(std::move(nodes), n_classes);
    }
    return RandomForest(std::move(trees), n_features, n_classes, cfg);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("forest checkpoint: ") + e.what());
  }
}

}  // namespace xastruct::forest
