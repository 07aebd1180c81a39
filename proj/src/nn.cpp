#include "xastruct/nn.hpp"

#include <cmath>

#include "xastruct/error.hpp"

namespace xastruct::nn {

Tensor XavierUniform(ad::Shape shape, std::size_t fan_in, std::size_t fan_out,
                     Rng& rng) {
  Tensor t(std::move(shape));
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data()) v = rng.Uniform(-limit, limit);
  return t;
}

// ---- GatedLinear ------------------------------------------------------------

GatedLinear::GatedLinear(std::size_t d_in, std::size_t d_out, Rng& rng)
    : d_in_(d_in),
      d_out_(d_out),
      w_v_(XavierUniform({d_out, d_in}, d_in, d_out, rng)),
      w_g_(XavierUniform({d_out, d_in}, d_in, d_out, rng)),
      b_v_(Tensor({d_out}, 0.0)),
      b_g_(Tensor({d_out}, 0.0)) {}

Var GatedLinear::operator()(const Var& x) const {
  const Var value = ad::Linear(x, w_v_.var(), b_v_.var());
  const Var gate = ad::Sigmoid(ad::Linear(x, w_g_.var(), b_g_.var()));
  return ad::Mul(value, gate);
}

namespace {

Var PairwiseLinear(const Var& w, const Var& b, const Var& h,
                   std::span<const std::size_t> src,
                   std::span<const std::size_t> dst, const Var& edge) {
  const std::size_t d = h.value().dim(1);
  const std::size_t d_edge = edge.value().dim(1);
  const std::size_t out = w.value().dim(0);
  if (w.value().dim(1) != 2 * d + d_edge) {
    throw Error(ErrorCode::kShape, "pairwise: weight " + ad::ShapeString(w.shape()) +
                                       " does not match node width " +
                                       std::to_string(d));
  }
  const Var zero = ad::Constant(Tensor({out}, 0.0));
  const Var from_src = ad::Linear(h, ad::SliceColumns(w, 0, d), zero);
  const Var from_dst = ad::Linear(h, ad::SliceColumns(w, d, 2 * d), zero);
  const Var from_edge =
      ad::Linear(edge, ad::SliceColumns(w, 2 * d, 2 * d + d_edge), b);
  return ad::Add(ad::Add(ad::GatherRows(from_src, src), ad::GatherRows(from_dst, dst)),
                 from_edge);
}

}  // namespace

Var GatedLinear::Pairwise(const Var& h, std::span<const std::size_t> src,
                          std::span<const std::size_t> dst,
                          const Var& edge) const {
  const Var value = PairwiseLinear(w_v_.var(), b_v_.var(), h, src, dst, edge);
  const Var gate =
      ad::Sigmoid(PairwiseLinear(w_g_.var(), b_g_.var(), h, src, dst, edge));
  return ad::Mul(value, gate);
}

void GatedLinear::Visit(const std::string& prefix, StateVisitor& v) {
  v.Param(prefix + ".w_v", w_v_);
  v.Param(prefix + ".w_g", w_g_);
  v.Param(prefix + ".b_v", b_v_);
  v.Param(prefix + ".b_g", b_g_);
}

// ---- SwiGLU -----------------------------------------------------------------

SwiGLU::SwiGLU(std::size_t d_in, std::size_t d_out, Rng& rng)
    : w_v_(XavierUniform({d_out, d_in}, d_in, d_out, rng)),
      w_g_(XavierUniform({d_out, d_in}, d_in, d_out, rng)),
      b_v_(Tensor({d_out}, 0.0)),
      b_g_(Tensor({d_out}, 0.0)),
      beta_(Tensor::Scalar(1.0)) {}

Var SwiGLU::operator()(const Var& x) const {
  const Var gate = ad::Linear(x, w_g_.var(), b_g_.var());
  const Var value = ad::Linear(x, w_v_.var(), b_v_.var());
  return ad::Mul(ad::SwishBeta(gate, beta_.var()), value);
}

void SwiGLU::Visit(const std::string& prefix, StateVisitor& v) {
  v.Param(prefix + ".w_v", w_v_);
  v.Param(prefix + ".w_g", w_g_);
  v.Param(prefix + ".b_v", b_v_);
  v.Param(prefix + ".b_g", b_g_);
  v.Param(prefix + ".beta", beta_);
}

// ---- LayerNorm / SBlock / SGMLP ----------------------------------------------

LayerNormLayer::LayerNormLayer(std::size_t d)
    : gain_(Tensor({d}, 1.0)), bias_(Tensor({d}, 0.0)) {}

Var LayerNormLayer::operator()(const Var& x) const {
  return ad::LayerNorm(x, gain_.var(), bias_.var());
}

void LayerNormLayer::Visit(const std::string& prefix, StateVisitor& v) {
  v.Param(prefix + ".gain", gain_);
  v.Param(prefix + ".bias", bias_);
}

SBlock::SBlock(std::size_t d_in, std::size_t d_out, Rng& rng)
    : gated_(d_in, d_out, rng), norm_(d_out), swiglu_(d_out, d_out, rng) {}

Var SBlock::operator()(const Var& x) const {
  return swiglu_(norm_(gated_(x)));
}

Var SBlock::Pairwise(const Var& h, std::span<const std::size_t> src,
                     std::span<const std::size_t> dst, const Var& edge) const {
  return swiglu_(norm_(gated_.Pairwise(h, src, dst, edge)));
}

void SBlock::Visit(const std::string& prefix, StateVisitor& v) {
  gated_.Visit(prefix + ".gated", v);
  norm_.Visit(prefix + ".norm", v);
  swiglu_.Visit(prefix + ".swiglu", v);
}

namespace {

std::vector<SBlock> MakeBlocks(std::size_t d_in, std::size_t hidden, int k,
                               Rng& rng) {
  if (k < 1) throw Error(ErrorCode::kShape, "SGMLP needs k >= 1");
  std::vector<SBlock> blocks;
  for (int i = 0; i < k - 1; ++i) {
    blocks.emplace_back(i == 0 ? d_in : hidden, hidden, rng);
  }
  return blocks;
}

}  // namespace

SGMLP::SGMLP(std::size_t d_in, std::size_t hidden, std::size_t d_out, int k,
             Rng& rng)
    : blocks_(MakeBlocks(d_in, hidden, k, rng)),
      final_(k == 1 ? d_in : hidden, d_out, rng) {}

Var SGMLP::operator()(const Var& x) const {
  Var h = x;
  for (const auto& block : blocks_) h = block(h);
  return final_(h);
}

Var SGMLP::Pairwise(const Var& h, std::span<const std::size_t> src,
                    std::span<const std::size_t> dst, const Var& edge) const {
  if (blocks_.empty()) return final_.Pairwise(h, src, dst, edge);
  Var x = blocks_.front().Pairwise(h, src, dst, edge);
  for (std::size_t i = 1; i < blocks_.size(); ++i) x = blocks_[i](x);
  return final_(x);
}

void SGMLP::Visit(const std::string& prefix, StateVisitor& v) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].Visit(prefix + ".block" + std::to_string(i), v);
  }
  final_.Visit(prefix + ".final", v);
}

// ---- ConvBlock --------------------------------------------------------------

ConvBlock::ConvBlock(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                     Rng& rng)
    : weight_(XavierUniform({c_out, c_in, kernel}, c_in * kernel,
                            c_out * kernel, rng)),
      bias_(Tensor({c_out}, 0.0)),
      gamma_(Tensor({c_out}, 1.0)),
      beta_(Tensor({c_out}, 0.0)),
      bn_state_(c_out) {}

Var ConvBlock::PreActivation(const Var& z, bool training) {
  if (z.value().rank() != 3 || z.value().dim(2) < 2) {
    throw Error(ErrorCode::kShape, "conv block needs [B, C, L>=2] input, got " +
                                       ad::ShapeString(z.shape()));
  }
  const Var conv = ad::Conv1d(z, weight_.var(), bias_.var());
  return ad::BatchNorm1d(conv, gamma_.var(), beta_.var(), bn_state_, training);
}

Var ConvBlock::operator()(const Var& z, bool training) {
  return ad::AvgPool1d(ad::Relu(PreActivation(z, training)));
}

void ConvBlock::Visit(const std::string& prefix, StateVisitor& v) {
  v.Param(prefix + ".conv_w", weight_);
  v.Param(prefix + ".conv_b", bias_);
  v.Param(prefix + ".bn_gamma", gamma_);
  v.Param(prefix + ".bn_beta", beta_);
  v.Buffer(prefix + ".bn_running_mean", bn_state_.running_mean);
  v.Buffer(prefix + ".bn_running_var", bn_state_.running_var);
}

// ---- MPEncoder --------------------------------------------------------------

std::vector<double> RadialBasis(double distance, std::size_t n_rbf,
                                double rbf_max) {
  std::vector<double> out(n_rbf);
  const double spacing = n_rbf > 1 ? rbf_max / static_cast<double>(n_rbf - 1)
                                   : rbf_max;
  for (std::size_t i = 0; i < n_rbf; ++i) {
    const double center = spacing * static_cast<double>(i);
    const double u = (distance - center) / spacing;
    out[i] = std::exp(-0.5 * u * u);
  }
  return out;
}

MPEncoder::MPEncoder(const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg),
      embedding_(XavierUniform({static_cast<std::size_t>(kMaxAtomicNumber), cfg.d},
                               kMaxAtomicNumber, cfg.d, rng)) {
  for (int r = 0; r < cfg.rounds; ++r) {
    SGMLP message(2 * cfg.d + cfg.n_rbf, cfg.hidden, cfg.d, cfg.k, rng);
    SGMLP update(2 * cfg.d, cfg.hidden, cfg.d, cfg.k, rng);
    rounds_.push_back({std::move(message), std::move(update), LayerNormLayer(cfg.d)});
  }
}

Var MPEncoder::Encode(const StructureGraph& g) const {
  const StructureGraph* one[] = {&g};
  return EncodeBatch(one);
}

Var MPEncoder::EncodeBatch(std::span<const StructureGraph* const> graphs) const {
  std::vector<std::size_t> species;
  std::vector<std::size_t> src, dst;
  std::vector<double> rbf;
  std::size_t offset = 0;
  for (const StructureGraph* g : graphs) {
    if (g->num_nodes() == 0) {
      throw Error(ErrorCode::kInvalidGraph, "graph has no nodes");
    }
    for (const auto& el : g->node_elements) {
      species.push_back(static_cast<std::size_t>(el.atomic_number() - 1));
    }
    for (const auto& e : g->edges) {
      if (e.i >= g->num_nodes() || e.j >= g->num_nodes()) {
        throw Error(ErrorCode::kInvalidGraph, "edge endpoint out of range");
      }
      src.push_back(offset + e.i);
      dst.push_back(offset + e.j);
      const auto basis = RadialBasis(e.distance, cfg_.n_rbf, cfg_.rbf_max);
      rbf.insert(rbf.end(), basis.begin(), basis.end());
    }
    offset += g->num_nodes();
  }
  const std::size_t n_nodes = offset;
  const std::size_t n_edges = src.size();

  Var h = ad::GatherRows(embedding_.var(), species);
  if (n_edges == 0) {
    const Var zeros = ad::Constant(Tensor({n_nodes, cfg_.d}, 0.0));
    for (const auto& round : rounds_) {
      const Var upd = round.update(ad::Concat({h, zeros}, 1));
      h = round.norm(ad::Add(h, upd));
    }
    return h;
  }
  const Var rbf_var = ad::Constant(Tensor({n_edges, cfg_.n_rbf}, std::move(rbf)));
  const std::vector<double> ones(n_edges, 1.0);
  for (const auto& round : rounds_) {
    const Var messages = round.message.Pairwise(h, src, dst, rbf_var);
    const Var aggregated = ad::ScatterAddRows(messages, src, ones, n_nodes);
    const Var upd = round.update(ad::Concat({h, aggregated}, 1));
    h = round.norm(ad::Add(h, upd));
  }
  return h;
}

void MPEncoder::Visit(const std::string& prefix, StateVisitor& v) {
  v.Param(prefix + ".embedding", embedding_);
  for (std::size_t r = 0; r < rounds_.size(); ++r) {
    const std::string p = prefix + ".round" + std::to_string(r);
    rounds_[r].message.Visit(p + ".message", v);
    rounds_[r].update.Visit(p + ".update", v);
    rounds_[r].norm.Visit(p + ".norm", v);
  }
}

}  // namespace xastruct::nn
