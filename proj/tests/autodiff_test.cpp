#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "xastruct/autodiff.hpp"
#include "xastruct/error.hpp"
#include "xastruct/gradcheck.hpp"
#include "xastruct/random.hpp"

namespace xastruct::ad {
namespace {

Tensor Random(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.Uniform(-scale, scale);
  return t;
}

ErrorCode CodeOf(const std::function<void()>& fn, std::string* message = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kUsage;
}

TEST(Ops, AnalyticValues) {
  EXPECT_EQ(Sigmoid(Constant(Tensor::Scalar(0))).value()[0], 0.5);
  for (double beta : {-3.0, 0.0, 0.7, 12.0}) {
    EXPECT_EQ(SwishBeta(Constant(Tensor::Scalar(0)), Constant(Tensor::Scalar(beta))).value()[0], 0.0);
  }
  const auto r = Relu(Constant(Tensor::Vector({-1, 0, 2}))).value();
  EXPECT_EQ(r, Tensor::Vector({0, 0, 2}));
}

TEST(Ops, MaskedMeanDividesByNodeCount) {
  Rng rng(1);
  const Tensor h = Random({4, 3}, rng);
  const auto all = MaskedMean(Constant(h), std::vector<double>{1, 1, 1, 1}).value();
  const auto none = MaskedMean(Constant(h), std::vector<double>{0, 0, 0, 0}).value();
  const auto some = MaskedMean(Constant(h), std::vector<double>{1, 0, 1, 0}).value();
  const auto by_mask = MaskedMean(Constant(h), std::vector<double>{1, 0, 1, 0}, true).value();
  for (std::size_t c = 0; c < 3; ++c) {
    const double sum = h.at(0, c) + h.at(1, c) + h.at(2, c) + h.at(3, c);
    EXPECT_NEAR(all[c], sum / 4, 1e-15);
    EXPECT_EQ(none[c], 0.0);
    EXPECT_NEAR(some[c], (h.at(0, c) + h.at(2, c)) / 4, 1e-15);
    EXPECT_NEAR(by_mask[c], (h.at(0, c) + h.at(2, c)) / 2, 1e-15);
  }
}

TEST(Ops, ShapeMismatchReportsBothShapes) {
  std::string msg;
  EXPECT_EQ(CodeOf([] { Add(Constant(Tensor({2, 3})), Constant(Tensor({3, 2}))); }, &msg),
            ErrorCode::kShape);
  EXPECT_NE(msg.find(ShapeString({2, 3})), std::string::npos) << msg;
  EXPECT_NE(msg.find(ShapeString({3, 2})), std::string::npos) << msg;
  EXPECT_EQ(CodeOf([] { MatMul(Constant(Tensor({2, 3})), Constant(Tensor({2, 3}))); }),
            ErrorCode::kShape);
  EXPECT_EQ(CodeOf([] { Concat({Constant(Tensor({2, 3})), Constant(Tensor({3, 2}))}, 1); }),
            ErrorCode::kShape);
}

TEST(Ops, LayerNormStandardizesEachRow) {
  Rng rng(3);
  const Tensor x = Random({5, 8}, rng, 10.0);
  const auto y = LayerNorm(Constant(x), Constant(Tensor({8}, 1.0)), Constant(Tensor({8}, 0.0))).value();
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 8; ++c) mean += y.at(r, c) / 8;
    for (std::size_t c = 0; c < 8; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean) / 8;
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(Ops, Conv1dIdentityKernelCopiesInput) {
  Rng rng(4);
  const Tensor x = Random({2, 3, 7}, rng);
  for (std::size_t k : {1u, 3u, 5u}) {
    Tensor w({3, 3, k}, 0.0);
    for (std::size_t c = 0; c < 3; ++c) w[(c * 3 + c) * k + k / 2] = 1.0;
    EXPECT_EQ(Conv1d(Constant(x), Constant(w), Constant(Tensor({3}, 0.0))).value(), x);
  }
}

TEST(Ops, AvgPoolHalvesLength) {
  const Tensor x({1, 1, 4}, {1, 3, 10, 20});
  EXPECT_EQ(AvgPool1d(Constant(x)).value(), Tensor({1, 1, 2}, {2, 15}));
}

TEST(Ops, BatchNormRunningStatistics) {
  Rng rng(5);
  const Tensor x = Random({6, 2, 4}, rng);
  BatchNormState state(2);
  const Var gamma = Constant(Tensor({2}, 1.0)), beta = Constant(Tensor({2}, 0.0));
  BatchNorm1d(Constant(x), gamma, beta, state, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0;
    for (std::size_t b = 0; b < 6; ++b)
      for (std::size_t l = 0; l < 4; ++l) mean += x[(b * 2 + c) * 4 + l] / 24;
    EXPECT_NEAR(state.running_mean[c], 0.1 * mean, 1e-12);
  }
  // Eval mode is a fixed affine map per channel.
  const Tensor eval = BatchNorm1d(Constant(x), gamma, beta, state, false).value();
  for (std::size_t c = 0; c < 2; ++c) {
    const double v = x[c * 4], want = (v - state.running_mean[c]) /
                                       std::sqrt(state.running_var[c] + state.eps);
    EXPECT_NEAR(eval[c * 4], want, 1e-12);
  }
}

TEST(Losses, MseOfEqualInputsIsZero) {
  Rng rng(6);
  const Tensor t = Random({3, 4}, rng);
  EXPECT_EQ(MseLoss(Constant(t), t).value()[0], 0.0);
  EXPECT_NEAR(MseLoss(Constant(Tensor::Vector({1, 2})), Tensor::Vector({0, 0})).value()[0], 2.5, 1e-15);
}

TEST(Losses, UniformLogitsCostLnC) {
  for (std::size_t c : {2u, 3u, 7u}) {
    const Tensor logits({1, c}, 0.3);
    EXPECT_NEAR(CrossEntropyLoss(Constant(logits), std::vector<int>{1}).value()[0],
                std::log(static_cast<double>(c)), 1e-12);
  }
}

TEST(Losses, CrossEntropyHandCase) {
  const Tensor logits({1, 2}, {2, 0});
  EXPECT_NEAR(CrossEntropyLoss(Constant(logits), std::vector<int>{0}).value()[0],
              std::log(1 + std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(std::log(1 + std::exp(-2.0)), 0.1269, 1e-4);
}

TEST(Losses, LabelOutOfRange) {
  const Tensor logits({2, 3}, 0.0);
  EXPECT_EQ(CodeOf([&] { CrossEntropyLoss(Constant(logits), std::vector<int>{0, 3}); }),
            ErrorCode::kLabel);
  EXPECT_EQ(CodeOf([&] { CrossEntropyLoss(Constant(logits), std::vector<int>{-1, 0}); }),
            ErrorCode::kLabel);
}

TEST(Losses, SoftmaxRowsSumToOne) {
  Rng rng(7);
  const Tensor p = Softmax(Random({5, 6}, rng, 30.0));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) s += p.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Backward, LinearMapGradientIsBroadcastInput) {
  Parameter w(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  const Var x = Constant(Tensor({2, 1}, {0.5, -2}));
  std::vector<Parameter*> params = {&w};
  Backward(Sum(MatMul(w.var(), x)), params);
  EXPECT_EQ(w.grad(), Tensor({3, 2}, {0.5, -2, 0.5, -2, 0.5, -2}));
}

TEST(Backward, DisconnectedParameterGetsZeroGradient) {
  Parameter used(Tensor::Vector({1, 2})), unused(Tensor::Vector({3, 4}));
  std::vector<Parameter*> params = {&used, &unused};
  Backward(Sum(Mul(used.var(), used.var())), params);
  EXPECT_EQ(used.grad(), Tensor::Vector({2, 4}));
  EXPECT_EQ(unused.grad(), Tensor::Vector({0, 0}));
}

TEST(Backward, NonScalarLossIsARankError) {
  Parameter p(Tensor::Vector({1, 2}));
  EXPECT_EQ(CodeOf([&] { Backward(Scale(p.var(), 2)); }), ErrorCode::kRank);
}

TEST(Backward, SharedSubexpressionsAccumulate) {
  Parameter p(Tensor::Vector({3}));
  const Var y = Mul(p.var(), p.var());
  std::vector<Parameter*> params = {&p};
  Backward(Sum(Add(y, Mul(y, p.var()))), params);  // x^2 + x^3
  EXPECT_NEAR(p.grad()[0], 2 * 3 + 3 * 9, 1e-12);
}

TEST(NoGrad, DisablesTaping) {
  Parameter p(Tensor::Vector({1}));
  {
    NoGradGuard guard;
    EXPECT_FALSE(GradEnabled());
    EXPECT_FALSE(Scale(p.var(), 2).requires_grad());
  }
  EXPECT_TRUE(GradEnabled());
}

TEST(AdamW, ZeroGradientShrinksByDecoupledDecay) {
  Parameter p(Tensor::Vector({2.0, -4.0}));
  std::vector<Parameter*> params = {&p};
  p.ZeroGrad();
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  AdamWStep(params, cfg);
  EXPECT_DOUBLE_EQ(p.value()[0], 2.0 - 0.1 * 0.01 * 2.0);
  EXPECT_DOUBLE_EQ(p.value()[1], -4.0 - 0.1 * 0.01 * -4.0);
}

TEST(AdamW, OneStepOnSquareDescends) {
  Parameter w(Tensor::Vector({1.0}));
  std::vector<Parameter*> params = {&w};
  Backward(Sum(Mul(w.var(), w.var())), params);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  AdamWStep(params, cfg);
  EXPECT_LT(w.value()[0], 1.0);
}

TEST(AdamW, ConvergesOnTwoParameterQuadratic) {
  Parameter w(Tensor::Vector({0.0, 0.0}));
  std::vector<Parameter*> params = {&w};
  const Tensor center = Tensor::Vector({1.0, -2.0});
  const Tensor curvature = Tensor::Vector({1.0, 3.0});
  auto loss = [&] {
    const Var d = Add(w.var(), Constant(Tensor::Vector({-center[0], -center[1]})));
    return Sum(Mul(Mul(d, d), Constant(curvature)));
  };
  const double initial = loss().value()[0];
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  for (int step = 0; step < 200; ++step) {
    Backward(loss(), params);
    AdamWStep(params, cfg);
  }
  EXPECT_LT(loss().value()[0], 1e-3 * initial);
}

TEST(AdamW, WithoutDecayMatchesReferenceAdam) {
  Rng rng(9);
  Parameter w(Random({4}, rng));
  std::vector<double> ref(w.value().data().begin(), w.value().data().end());
  std::vector<double> m(4, 0.0), v(4, 0.0);
  std::vector<Parameter*> params = {&w};
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  for (int t = 1; t <= 50; ++t) {
    // f(w) = sum w^4 / 4 - w, gradient w^3 - 1.
    const Var w3 = Mul(Mul(w.var(), w.var()), w.var());
    Backward(Add(Scale(Sum(Mul(w3, w.var())), 0.25), Scale(Sum(w.var()), -1)), params);
    AdamWStep(params, cfg);
    for (std::size_t i = 0; i < 4; ++i) {
      const double g = ref[i] * ref[i] * ref[i] - 1;
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t));
      const double vh = v[i] / (1 - std::pow(cfg.beta2, t));
      ref[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
      ASSERT_NEAR(w.value()[i], ref[i], 1e-12) << "step " << t;
    }
  }
}

TEST(GradCheck, EveryCasePasses) {
  const auto results = gradcheck::RunSuite({});
  std::set<std::string> names;
  for (const auto& r : results) {
    names.insert(r.name);
    EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
    EXPECT_LT(r.max_rel_error, 1e-4) << r.name;
    EXPECT_GE(r.seeds, 20);
  }
  for (const char* required : {"matmul", "add", "mul", "concat_axis0", "sigmoid", "relu",
                               "swish_beta", "layer_norm", "batch_norm_train", "batch_norm_eval",
                               "conv1d", "avg_pool1d", "masked_mean", "mse_loss",
                               "cross_entropy_loss", "gated_linear", "swiglu", "sblock", "sgmlp",
                               "conv_block_train", "conv_block_eval", "mpencoder_round"}) {
    EXPECT_TRUE(names.count(required)) << required;
  }
}

TEST(GradCheck, CatchesAWrongBackward) {
  gradcheck::Options opt;
  opt.seeds = 3;
  opt.inject_fault = true;
  for (const auto& r : gradcheck::RunSuite(opt)) {
    EXPECT_EQ(r.passed, r.name != "injected_fault") << r.name;
  }
}

TEST(GradCheck, RelativeError) {
  EXPECT_EQ(gradcheck::RelativeError(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(gradcheck::RelativeError(1.0, 3.0), 0.5);
  EXPECT_DOUBLE_EQ(gradcheck::RelativeError(0.0, 1e-9), 1e-9 / 1e-6);
}

}  // namespace
}  // namespace xastruct::ad
