#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "xastruct/error.hpp"
#include "xastruct/nn.hpp"

namespace xastruct::nn {
namespace {

using ad::Constant;

Tensor Random(ad::Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.Uniform(-scale, scale);
  return t;
}

void Fill(Parameter& p, Rng& rng) {
  for (double& v : p.mutable_value().data()) v = rng.Uniform(-1, 1);
}

// y = W x + b for W[out, in] stored row-major, x one row.
std::vector<double> Affine(const Tensor& w, const Tensor& b, std::span<const double> x) {
  std::vector<double> y(w.dim(0));
  for (std::size_t o = 0; o < w.dim(0); ++o) {
    y[o] = b[o];
    for (std::size_t i = 0; i < w.dim(1); ++i) y[o] += w.at(o, i) * x[i];
  }
  return y;
}

TEST(GatedLinear, ClosedGateHalvesTheValueBranch) {
  Rng rng(1);
  GatedLinear layer(3, 2, rng);
  Fill(layer.b_value(), rng);
  layer.w_gate().mutable_value().Fill(0);
  layer.b_gate().mutable_value().Fill(0);
  const Tensor x = Random({1, 3}, rng);
  const auto y = layer(Constant(x)).value();
  const auto v = Affine(layer.w_value().value(), layer.b_value().value(), x.data());
  for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(y[o], 0.5 * v[o], 1e-15);
}

TEST(GatedLinear, SaturatedGatePassesTheValueBranch) {
  Rng rng(2);
  GatedLinear layer(3, 2, rng);
  layer.b_gate().mutable_value().Fill(50);
  const Tensor x = Random({1, 3}, rng);
  const auto y = layer(Constant(x)).value();
  const auto v = Affine(layer.w_value().value(), layer.b_value().value(), x.data());
  for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(y[o], v[o], 1e-9);
}

TEST(GatedLinear, MatchesScalarFormula) {
  Rng rng(3);
  GatedLinear layer(3, 2, rng);
  Fill(layer.b_value(), rng);
  Fill(layer.b_gate(), rng);
  const Tensor x = Random({4, 3}, rng);
  const auto y = layer(Constant(x)).value();
  for (std::size_t r = 0; r < 4; ++r) {
    const auto row = std::span<const double>(x.data()).subspan(r * 3, 3);
    const auto v = Affine(layer.w_value().value(), layer.b_value().value(), row);
    const auto g = Affine(layer.w_gate().value(), layer.b_gate().value(), row);
    for (std::size_t o = 0; o < 2; ++o) {
      EXPECT_NEAR(y.at(r, o), v[o] * oracle::Sigmoid(g[o]), 1e-14);
    }
  }
}

TEST(GatedLinear, PairwiseEqualsExplicitConcatenation) {
  Rng rng(4);
  GatedLinear layer(2 * 3 + 2, 4, rng);
  Fill(layer.b_value(), rng);
  Fill(layer.b_gate(), rng);
  const Tensor h = Random({5, 3}, rng), edge = Random({6, 2}, rng);
  const std::vector<std::size_t> src = {0, 1, 4, 2, 2, 3}, dst = {1, 0, 3, 4, 0, 2};
  const auto pair = layer.Pairwise(Constant(h), src, dst, Constant(edge)).value();
  Tensor cat({6, 8});
  for (std::size_t e = 0; e < 6; ++e) {
    for (std::size_t c = 0; c < 3; ++c) {
      cat.at(e, c) = h.at(src[e], c);
      cat.at(e, 3 + c) = h.at(dst[e], c);
    }
    for (std::size_t c = 0; c < 2; ++c) cat.at(e, 6 + c) = edge.at(e, c);
  }
  const auto direct = layer(Constant(cat)).value();
  for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_NEAR(pair[i], direct[i], 1e-13);
}

TEST(SwiGLU, ZeroInputZeroBiasesGiveZero) {
  Rng rng(5);
  SwiGLU layer(3, 4, rng);
  const auto y = layer(Constant(Tensor({2, 3}, 0.0))).value();
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(SwiGLU, ZeroBetaHalvesTheGate) {
  Rng rng(6);
  SwiGLU layer(3, 2, rng);
  layer.beta().mutable_value().Fill(0);
  Fill(layer.b_value(), rng);
  Fill(layer.b_gate(), rng);
  const Tensor x = Random({1, 3}, rng);
  const auto y = layer(Constant(x)).value();
  const auto v = Affine(layer.w_value().value(), layer.b_value().value(), x.data());
  const auto g = Affine(layer.w_gate().value(), layer.b_gate().value(), x.data());
  for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(y[o], 0.5 * g[o] * v[o], 1e-14);
}

TEST(SwiGLU, MatchesScalarFormula) {
  Rng rng(7);
  SwiGLU layer(4, 3, rng);
  layer.beta().mutable_value().Fill(1.7);
  Fill(layer.b_value(), rng);
  Fill(layer.b_gate(), rng);
  const Tensor x = Random({3, 4}, rng);
  const auto y = layer(Constant(x)).value();
  const double beta = 1.7;
  for (std::size_t r = 0; r < 3; ++r) {
    const auto row = std::span<const double>(x.data()).subspan(r * 4, 4);
    const auto v = Affine(layer.w_value().value(), layer.b_value().value(), row);
    const auto g = Affine(layer.w_gate().value(), layer.b_gate().value(), row);
    for (std::size_t o = 0; o < 3; ++o) {
      EXPECT_NEAR(y.at(r, o), g[o] / (1 + std::exp(-beta * g[o])) * v[o], 1e-12);
    }
  }
}

TEST(SGMLP, SingleLayerIsExactlyGatedLinear) {
  Rng a(8), b(8);
  SGMLP mlp(5, 7, 3, 1, a);
  GatedLinear gl(5, 3, b);
  EXPECT_EQ(mlp.num_blocks(), 0u);
  Rng xr(9);
  const Tensor x = Random({4, 5}, xr);
  EXPECT_EQ(mlp(Constant(x)).value(), gl(Constant(x)).value());
}

TEST(SGMLP, ThreeLayersAreTwoBlocksAndAGatedLinear) {
  Rng rng(10);
  SGMLP mlp(5, 7, 3, 3, rng);
  EXPECT_EQ(mlp.num_blocks(), 2u);
  EXPECT_EQ(mlp.final_layer().d_in(), 7u);
  EXPECT_EQ(mlp.final_layer().d_out(), 3u);
  EXPECT_EQ(mlp(Constant(Tensor({2, 5}, 0.3))).shape(), (ad::Shape{2, 3}));
}

TEST(SGMLP, ComposesBlocksAsPrinted) {
  Rng a(11), b(11);
  SGMLP mlp(4, 6, 2, 2, a);
  SBlock block(4, 6, b);
  GatedLinear final(6, 2, b);
  Rng xr(12);
  const Tensor x = Random({3, 4}, xr);
  EXPECT_EQ(mlp(Constant(x)).value(), final(block(Constant(x))).value());
}

TEST(SGMLP, ShapeMismatch) {
  Rng rng(13);
  SGMLP mlp(4, 6, 2, 2, rng);
  try {
    mlp(Constant(Tensor({3, 5})));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
}

TEST(ConvBlock, ZeroInputInEvalModeIsZero) {
  Rng rng(14);
  ConvBlock block(2, 3, 5, rng);
  block.conv_bias().mutable_value().Fill(0);
  const auto y = block(Constant(Tensor({2, 2, 10}, 0.0)), false).value();
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(ConvBlock, OutputIsNonNegativeAndHalvesLength) {
  Rng rng(15);
  ConvBlock block(3, 4, 5, rng);
  for (bool training : {true, false}) {
    const auto y = block(Constant(Random({2, 3, 100}, rng, 3.0)), training).value();
    EXPECT_EQ(y.shape(), (ad::Shape{2, 4, 50}));
    for (double v : y.data()) EXPECT_GE(v, 0.0);
  }
}

TEST(ConvBlock, LengthBelowTwoIsAShapeError) {
  Rng rng(16);
  ConvBlock block(1, 1, 3, rng);
  try {
    block(Constant(Tensor({1, 1, 1}, 1.0)), false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
}

TEST(RadialBasis, ValuesInUnitIntervalAndOneAtCenters) {
  const std::size_t n = 16;
  const double max = 6.0;
  for (double d = 0; d < 9; d += 0.013) {
    for (double v : RadialBasis(d, n, max)) {
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  const double spacing = max / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_EQ(RadialBasis(spacing * static_cast<double>(i), n, max)[i], 1.0);
  }
}

const EncoderConfig kSmall{8, 2, 6, 6.0, 8, 2};

StructureGraph Isolated(std::vector<Element> elements) {
  StructureGraph g;
  g.node_elements = elements;
  for (std::size_t i = 0; i < elements.size(); ++i) {
    g.node_cart.push_back({3.0 * static_cast<double>(i), 0, 0});
  }
  g.mask.assign(elements.size(), 1);
  return g;
}

TEST(MPEncoder, LonelyNodeOnlyUpdatesItsEmbedding) {
  Rng rng(17);
  MPEncoder enc(kSmall, rng);
  const Element cu = Element::FromSymbol("Cu");

  // Rebuild the same parameters from the same seed and run the rounds with
  // an all-zero message sum.
  Rng ref_rng(17);
  const Tensor embedding = XavierUniform({118, kSmall.d}, 118, kSmall.d, ref_rng);
  std::vector<SGMLP> updates;
  for (int r = 0; r < kSmall.rounds; ++r) {
    SGMLP message(2 * kSmall.d + kSmall.n_rbf, kSmall.hidden, kSmall.d, kSmall.k, ref_rng);
    updates.emplace_back(2 * kSmall.d, kSmall.hidden, kSmall.d, kSmall.k, ref_rng);
  }
  Tensor h({1, kSmall.d});
  for (std::size_t c = 0; c < kSmall.d; ++c) h[c] = embedding.at(28, c);
  Var hv = Constant(h);
  LayerNormLayer norm(kSmall.d);
  for (const auto& update : updates) {
    hv = norm(ad::Add(hv, update(ad::Concat({hv, Constant(Tensor({1, kSmall.d}, 0.0))}, 1))));
  }
  const auto got = enc.Encode(Isolated({cu})).value();
  for (std::size_t c = 0; c < kSmall.d; ++c) EXPECT_NEAR(got[c], hv.value()[c], 1e-12);

  // Without edges nodes cannot see each other.
  const auto pair = enc.Encode(Isolated({Element::FromSymbol("O"), cu})).value();
  for (std::size_t c = 0; c < kSmall.d; ++c) EXPECT_NEAR(pair.at(1, c), got[c], 1e-12);
}

TEST(MPEncoder, EmptyGraphIsInvalid) {
  Rng rng(18);
  MPEncoder enc(kSmall, rng);
  try {
    enc.Encode(StructureGraph{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidGraph);
  }
}

TEST(MPEncoder, PermutingNodesPermutesRows) {
  Rng rng(19);
  MPEncoder enc(kSmall, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = oracle::RandomStructure(rng, 6);
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    rng.Shuffle(std::span<std::size_t>(order));
    const auto h = enc.Encode(BuildGraph(s, 0, 5.0)).value();
    const auto hp = enc.Encode(BuildGraph(s.Permuted(order), 0, 5.0)).value();
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t c = 0; c < kSmall.d; ++c)
        EXPECT_NEAR(hp.at(i, c), h.at(order[i], c), 1e-9);
  }
}

TEST(MPEncoder, IsomorphicCopiesGiveTheSameRowMultiset) {
  Rng rng(20);
  MPEncoder enc(kSmall, rng);
  const auto s = oracle::RandomStructure(rng, 7);
  const std::vector<std::size_t> order = [&] {
    std::vector<std::size_t> o(s.size());
    std::iota(o.rbegin(), o.rend(), 0);
    return o;
  }();
  const auto copy = s.Permuted(order).Translated({0.4, 0.1, 0.9});
  auto rows = [&](const Tensor& t) {
    std::vector<std::vector<double>> r(t.dim(0));
    for (std::size_t i = 0; i < t.dim(0); ++i)
      for (std::size_t c = 0; c < t.dim(1); ++c) r[i].push_back(t.at(i, c));
    std::sort(r.begin(), r.end());
    return r;
  };
  const auto a = rows(enc.Encode(BuildGraph(s, 0, 5.0)).value());
  const auto b = rows(enc.Encode(BuildGraph(copy, 0, 5.0)).value());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t c = 0; c < kSmall.d; ++c) EXPECT_NEAR(a[i][c], b[i][c], 1e-9);
}

TEST(MPEncoder, BatchRowsMatchSingleEncodings) {
  Rng rng(21);
  MPEncoder enc(kSmall, rng);
  const auto g1 = BuildGraph(oracle::RandomStructure(rng, 4), 0, 5.0);
  const auto g2 = BuildGraph(oracle::RandomStructure(rng, 3), 0, 5.0);
  const StructureGraph* both[] = {&g1, &g2};
  const auto batch = enc.EncodeBatch(both).value();
  const auto a = enc.Encode(g1).value(), b = enc.Encode(g2).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(batch[i], a[i], 1e-12);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(batch[a.size() + i], b[i], 1e-12);
}

TEST(Xavier, BoundsAndDeterminism) {
  Rng a(22), b(22);
  const auto w = XavierUniform({10, 20}, 20, 10, a);
  const double bound = std::sqrt(6.0 / 30.0);
  for (double v : w.data()) EXPECT_LE(std::abs(v), bound);
  EXPECT_EQ(w, XavierUniform({10, 20}, 20, 10, b));
}

}  // namespace
}  // namespace xastruct::nn
