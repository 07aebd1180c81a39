#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "xastruct/error.hpp"
#include "xastruct/forest.hpp"

namespace xastruct::forest {
namespace {

DecisionTree Stump(double threshold, std::vector<double> left, std::vector<double> right) {
  const std::size_t c = left.size();
  return DecisionTree({{0, threshold, 1, 2, {}}, {-1, 0, -1, -1, std::move(left)},
                       {-1, 0, -1, -1, std::move(right)}},
                      c);
}

DecisionTree Leaf(std::vector<double> hist) {
  const std::size_t c = hist.size();
  return DecisionTree({{-1, 0, -1, -1, std::move(hist)}}, c);
}

FeatureMatrix Matrix(const std::vector<std::vector<double>>& rows) {
  FeatureMatrix x;
  x.d = rows.front().size();
  for (const auto& r : rows) x.AppendRow(r);
  return x;
}

TEST(Fit, SingleClassAlwaysPredictsIt) {
  Rng rng(1);
  FeatureMatrix x(20, 3);
  for (double& v : x.values) v = rng.Uniform();
  const std::vector<int> y(20, 2);
  ForestConfig cfg;
  cfg.n_trees = 7;
  const auto f = RandomForest::Fit(x, y, 4, cfg);
  for (int t = 0; t < 20; ++t) {
    const std::vector<double> q = {rng.Uniform(-5, 5), rng.Uniform(-5, 5), rng.Uniform(-5, 5)};
    EXPECT_EQ(f.Predict(q), 2);
  }
}

TEST(Fit, SeparableSetIsLearnedExactly) {
  Rng rng(2);
  FeatureMatrix x;
  x.d = 2;
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) {
    const double a = rng.Uniform(-1, 1), b = rng.Uniform(-1, 1);
    if (std::abs(a + 0.5 * b) < 0.05) continue;  // keep a margin
    x.AppendRow(std::vector<double>{a, b});
    y.push_back(a + 0.5 * b > 0 ? 1 : 0);
  }
  ForestConfig cfg;
  cfg.n_trees = 25;
  cfg.max_depth = 8;
  cfg.min_samples_leaf = 1;
  cfg.max_features = 2;
  cfg.seed = 3;
  const auto f = RandomForest::Fit(x, y, 2, cfg);
  for (std::size_t i = 0; i < x.n; ++i) EXPECT_EQ(f.Predict(x.row(i)), y[i]) << i;
}

TEST(Fit, AxisAlignedSetNeedsOnlyDepthTwo) {
  const auto x = Matrix({{0, 0}, {0, 1}, {1, 0}, {1, 1}, {0.1, 0.2}, {0.9, 0.8}});
  const std::vector<int> y = {0, 0, 1, 1, 0, 1};
  ForestConfig cfg;
  cfg.n_trees = 5;
  cfg.max_depth = 2;
  cfg.min_samples_leaf = 1;
  cfg.max_features = 2;
  cfg.bootstrap = false;
  const auto f = RandomForest::Fit(x, y, 2, cfg);
  for (std::size_t i = 0; i < x.n; ++i) EXPECT_EQ(f.Predict(x.row(i)), y[i]);
}

TEST(Fit, SameSeedSameForest) {
  Rng rng(4);
  FeatureMatrix x(40, 5);
  for (double& v : x.values) v = rng.Uniform();
  std::vector<int> y;
  for (std::size_t i = 0; i < 40; ++i) y.push_back(static_cast<int>(rng.Below(3)));
  ForestConfig cfg;
  cfg.n_trees = 10;
  cfg.seed = 99;
  const auto a = RandomForest::Fit(x, y, 3, cfg), b = RandomForest::Fit(x, y, 3, cfg);
  EXPECT_EQ(a.ToJson(), b.ToJson());
  cfg.seed = 100;
  EXPECT_NE(a.ToJson(), RandomForest::Fit(x, y, 3, cfg).ToJson());
}

TEST(Fit, FullyGrownTreesWithoutBootstrapFitTrainingData) {
  Rng rng(5);
  FeatureMatrix x(80, 6);
  for (double& v : x.values) v = rng.Uniform();
  std::vector<int> y;
  for (std::size_t i = 0; i < 80; ++i) y.push_back(static_cast<int>(rng.Below(4)));
  ForestConfig cfg;
  cfg.n_trees = 5;
  cfg.max_depth = ForestConfig::kUnlimitedDepth;
  cfg.min_samples_leaf = 1;
  cfg.bootstrap = false;
  const auto f = RandomForest::Fit(x, y, 4, cfg);
  for (std::size_t i = 0; i < x.n; ++i) EXPECT_EQ(f.Predict(x.row(i)), y[i]);
}

TEST(Fit, RejectsBadInput) {
  FeatureMatrix one(1, 2);
  EXPECT_THROW(RandomForest::Fit(one, std::vector<int>{0}, 2, {}), Error);
  FeatureMatrix two(2, 2);
  EXPECT_THROW(RandomForest::Fit(two, std::vector<int>{0, 2}, 2, {}), Error);
}

TEST(PredictProba, OneTreeForestIsThatTree) {
  const auto tree = Stump(0.5, {3, 1, 0}, {0, 2, 2});
  const RandomForest f({tree}, 1, 3);
  for (double v : {0.0, 0.5, 0.51, 9.0}) {
    EXPECT_EQ(f.PredictProba(std::vector<double>{v}), tree.PredictProba(std::vector<double>{v}));
  }
  EXPECT_EQ(f.PredictProba(std::vector<double>{0.2}), (std::vector<double>{0.75, 0.25, 0.0}));
}

TEST(PredictProba, TwoToOneVoteOfPureLeaves) {
  const RandomForest f({Leaf({1, 0}), Leaf({4, 0}), Leaf({0, 2})}, 3, 2);
  const auto p = f.PredictProba(std::vector<double>{0, 0, 0});
  EXPECT_NEAR(p[0], 2.0 / 3, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3, 1e-15);
  EXPECT_EQ(f.Predict(std::vector<double>{0, 0, 0}), 0);
}

TEST(PredictProba, SumsToOneAndIsNonNegative) {
  Rng rng(6);
  FeatureMatrix x(50, 4);
  for (double& v : x.values) v = rng.Uniform();
  std::vector<int> y;
  for (std::size_t i = 0; i < 50; ++i) y.push_back(static_cast<int>(rng.Below(5)));
  ForestConfig cfg;
  cfg.n_trees = 13;
  const auto f = RandomForest::Fit(x, y, 5, cfg);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> q(4);
    for (double& v : q) v = rng.Uniform(-1, 2);
    const auto p = f.PredictProba(q);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (double v : p) EXPECT_GE(v, 0.0);
  }
}

TEST(Predict, TiesGoToLowestClass) {
  const RandomForest f({Leaf({0, 1, 0}), Leaf({0, 0, 1})}, 1, 3);
  EXPECT_EQ(f.Predict(std::vector<double>{0}), 1);
  const RandomForest g({Leaf({1, 1})}, 1, 2);
  EXPECT_EQ(g.Predict(std::vector<double>{0}), 0);
}

TEST(Predict, DimensionMismatch) {
  const RandomForest f({Leaf({1, 0})}, 3, 2);
  try {
    f.Predict(std::vector<double>{1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLengthMismatch);
  }
  EXPECT_THROW(f.PredictProba(std::vector<double>{1, 2, 3, 4}), Error);
}

TEST(Serialization, RoundTrips) {
  Rng rng(7);
  FeatureMatrix x(30, 3);
  for (double& v : x.values) v = rng.Uniform();
  std::vector<int> y;
  for (std::size_t i = 0; i < 30; ++i) y.push_back(static_cast<int>(rng.Below(2)));
  ForestConfig cfg;
  cfg.n_trees = 4;
  const auto f = RandomForest::Fit(x, y, 2, cfg);
  const auto g = RandomForest::FromJson(f.ToJson());
  EXPECT_EQ(g.ToJson(), f.ToJson());
  for (std::size_t i = 0; i < x.n; ++i) EXPECT_EQ(g.PredictProba(x.row(i)), f.PredictProba(x.row(i)));
}

}  // namespace
}  // namespace xastruct::forest
