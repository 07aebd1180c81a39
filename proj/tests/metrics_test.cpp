#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "xastruct/error.hpp"
#include "xastruct/metrics.hpp"
#include "xastruct/random.hpp"

namespace xastruct {
namespace {

using V = std::vector<double>;
using I = std::vector<int>;
using P = std::vector<std::vector<double>>;

TEST(MeanAbsoluteError, HandCases) {
  EXPECT_DOUBLE_EQ(MeanAbsoluteError(V{1, 2, 6}, V{1, 2, 3}), 1.0);
  EXPECT_DOUBLE_EQ(MeanAbsoluteError(V{5}, V{0}), 5.0);
  EXPECT_DOUBLE_EQ(MeanAbsoluteError(V{2, 0, 2, 0}, V{1, 1, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(MeanAbsoluteError(V{1, -1}, V{-1, 1}), 2.0);
  EXPECT_DOUBLE_EQ(MeanAbsoluteError(V{1, 1, 1}, V{0.5, 1.5, 2.5}), 2.5 / 3);
  EXPECT_DOUBLE_EQ(MeanAbsoluteError(V{3.25, 7}, V{3.25, 7}), 0.0);
}

TEST(RSquared, HandCases) {
  EXPECT_DOUBLE_EQ(RSquared(V{1, 2, 6}, V{1, 2, 3}), -3.5);
  EXPECT_DOUBLE_EQ(RSquared(V{1, 2, 3}, V{1, 2, 3}), 1.0);
  EXPECT_DOUBLE_EQ(RSquared(V{2, 2, 2}, V{1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(RSquared(V{1, 2, 3, 5}, V{1, 2, 3, 4}), 0.8);
  EXPECT_DOUBLE_EQ(RSquared(V{0.5, 0.5, 0.5, 0.5}, V{0, 0, 1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(RSquared(V{3, 4, 5}, V{2, 4, 6}), 0.75);
}

TEST(RSquared, ConstantTargets) {
  EXPECT_EQ(RSquared(V{2, 2}, V{2, 2}), 1.0);
  EXPECT_EQ(RSquared(V{2, 3}, V{2, 2}), 0.0);
}

TEST(Accuracy, HandCases) {
  EXPECT_DOUBLE_EQ(Accuracy(I{0, 1, 2}, I{0, 1, 2}), 1.0);
  EXPECT_DOUBLE_EQ(Accuracy(I{0, 0, 0, 0}, I{0, 1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(Accuracy(I{1, 2, 3}, I{3, 2, 1}), 1.0 / 3);
  EXPECT_DOUBLE_EQ(Accuracy(I{5}, I{4}), 0.0);
  EXPECT_DOUBLE_EQ(Accuracy(I{0, 1, 1, 0, 1}, I{0, 1, 0, 0, 0}), 0.6);
}

TEST(MacroF1, HandCases) {
  EXPECT_DOUBLE_EQ(MacroF1(I{0, 1, 2}, I{0, 1, 2}), 1.0);
  // class 0: 2/(2+1); class 1: 4/(4+1)
  EXPECT_DOUBLE_EQ(MacroF1(I{0, 0, 1, 1}, I{0, 1, 1, 1}), (2.0 / 3 + 0.8) / 2);
  // class 0: 2/(2+2); classes 1 and 2 never predicted correctly
  EXPECT_DOUBLE_EQ(MacroF1(I{0, 0, 0}, I{0, 1, 2}), 0.5 / 3);
  EXPECT_DOUBLE_EQ(MacroF1(I{1, 1}, I{0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(MacroF1(I{0, 1, 2, 0}, I{0, 2, 1, 0}), 1.0 / 3);
}

TEST(MacroF1, InvariantUnderRelabeling) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    I pred, target;
    for (int i = 0; i < 30; ++i) {
      pred.push_back(static_cast<int>(rng.Below(4)));
      target.push_back(static_cast<int>(rng.Below(4)));
    }
    std::vector<int> perm = {0, 1, 2, 3};
    rng.Shuffle(std::span<int>(perm));
    I p2, t2;
    for (int v : pred) p2.push_back(perm[v] * 7 + 3);
    for (int v : target) t2.push_back(perm[v] * 7 + 3);
    EXPECT_DOUBLE_EQ(MacroF1(pred, target), MacroF1(p2, t2));
  }
}

TEST(CrossEntropy, HandCases) {
  EXPECT_NEAR(CrossEntropy(P{{0.25, 0.25, 0.25, 0.25}}, I{2}), std::log(4.0), 1e-15);
  EXPECT_NEAR(CrossEntropy(P{{0.8, 0.2}}, I{0}), -std::log(0.8), 1e-15);
  EXPECT_NEAR(CrossEntropy(P{{0.8, 0.2}, {0.3, 0.7}}, I{0, 1}),
              -std::log(0.8) - std::log(0.7), 1e-15);
  EXPECT_NEAR(CrossEntropy(P{{1.0, 0.0}}, I{1}), -std::log(1e-15), 1e-12);
  EXPECT_EQ(CrossEntropy(P{{1.0, 0.0, 0.0}}, I{0}), 0.0);
  EXPECT_NEAR(CrossEntropy(P{{0.25, 0.25, 0.5}}, I{2}), std::log(2.0), 1e-15);
}

TEST(CrossEntropy, UniformPredictionsCostLnCPerSample) {
  for (int c : {2, 3, 5, 10}) {
    P probs(4, std::vector<double>(c, 1.0 / c));
    EXPECT_NEAR(CrossEntropy(probs, I{0, 1, 0, c - 1}), 4 * std::log(c), 1e-12);
  }
}

TEST(Evaluate, PerfectPredictions) {
  const auto r = EvaluateRegression(V{1, 2, 3}, V{1, 2, 3});
  EXPECT_EQ(*r.mae, 0.0);
  EXPECT_EQ(*r.r2, 1.0);
  const auto c = EvaluateClassification(I{0, 1, 1}, I{0, 1, 1});
  EXPECT_EQ(*c.accuracy, 1.0);
  EXPECT_EQ(*c.macro_f1, 1.0);
  EXPECT_FALSE(c.cross_entropy.has_value());
  EXPECT_FALSE(r.accuracy.has_value());
}

TEST(Evaluate, MeanPredictorHasZeroR2) {
  Rng rng(1);
  V target;
  for (int i = 0; i < 25; ++i) target.push_back(rng.Uniform(-3, 3));
  double mean = 0;
  for (double v : target) mean += v;
  mean /= static_cast<double>(target.size());
  EXPECT_NEAR(*EvaluateRegression(V(target.size(), mean), target).r2, 0.0, 1e-12);
}

TEST(Evaluate, Properties) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    V a, b;
    for (int i = 0; i < 10; ++i) {
      a.push_back(rng.Uniform(-5, 5));
      b.push_back(rng.Uniform(-5, 5));
    }
    EXPECT_EQ(RSquared(a, a), 1.0);
    EXPECT_DOUBLE_EQ(MeanAbsoluteError(a, b), MeanAbsoluteError(b, a));
  }
}

TEST(Evaluate, Errors) {
  auto code = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kUsage;
  };
  EXPECT_EQ(code([] { EvaluateRegression(V{1, 2}, V{1}); }), ErrorCode::kLengthMismatch);
  EXPECT_EQ(code([] { EvaluateRegression(V{}, V{}); }), ErrorCode::kEmptyInput);
  EXPECT_EQ(code([] { EvaluateClassification(I{1}, I{1, 2}); }), ErrorCode::kLengthMismatch);
  EXPECT_EQ(code([] { EvaluateClassification(I{}, I{}); }), ErrorCode::kEmptyInput);
}

TEST(MetricsJson, MissingFieldsAreNull) {
  Metrics m;
  m.mae = 0.5;
  const auto j = MetricsJson(m);
  EXPECT_EQ(j["mae"], 0.5);
  EXPECT_TRUE(j["r2"].is_null());
  EXPECT_TRUE(j["accuracy"].is_null());
}

}  // namespace
}  // namespace xastruct
