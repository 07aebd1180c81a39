#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xastruct/autodiff.hpp"
#include "xastruct/crystal.hpp"
#include "xastruct/random.hpp"

namespace xastruct::nn {

using ad::Parameter;
using ad::Tensor;
using ad::Var;

/// Walks a module's named state. Parameters are trained; buffers (batch-norm
/// running statistics) are only saved and restored.
class StateVisitor {
 public:
  virtual ~StateVisitor() = default;
  virtual void Param(const std::string& name, Parameter& p) = 0;
  virtual void Buffer(const std::string& name, Tensor& t) = 0;
};

/// Collects raw parameter pointers, e.g. for the optimizer.
class ParameterCollector : public StateVisitor {
 public:
  void Param(const std::string&, Parameter& p) override { params.push_back(&p); }
  void Buffer(const std::string&, Tensor&) override {}
  std::vector<Parameter*> params;
};

/// uniform(+-sqrt(6 / (fan_in + fan_out)))
Tensor XavierUniform(ad::Shape shape, std::size_t fan_in, std::size_t fan_out,
                     Rng& rng);

/// (W_v x + b_v) * sigmoid(W_g x + b_g). Weights are [d_out, d_in].
class GatedLinear {
 public:
  GatedLinear(std::size_t d_in, std::size_t d_out, Rng& rng);

  Var operator()(const Var& x) const;
  /// Same as applying the layer to rows [h[src[e]] | h[dst[e]] | edge[e]],
  /// without materializing the concatenation.
  Var Pairwise(const Var& h, std::span<const std::size_t> src,
               std::span<const std::size_t> dst, const Var& edge) const;
  void Visit(const std::string& prefix, StateVisitor& v);

  std::size_t d_in() const { return d_in_; }
  std::size_t d_out() const { return d_out_; }
  Parameter& w_value() { return w_v_; }
  Parameter& w_gate() { return w_g_; }
  Parameter& b_value() { return b_v_; }
  Parameter& b_gate() { return b_g_; }

 private:
  std::size_t d_in_, d_out_;
  Parameter w_v_, w_g_, b_v_, b_g_;
};

/// swish_beta(W_g x + b_g) * (W_v x + b_v) with a learnable scalar beta.
class SwiGLU {
 public:
  SwiGLU(std::size_t d_in, std::size_t d_out, Rng& rng);

  Var operator()(const Var& x) const;
  void Visit(const std::string& prefix, StateVisitor& v);

  Parameter& w_value() { return w_v_; }
  Parameter& w_gate() { return w_g_; }
  Parameter& b_value() { return b_v_; }
  Parameter& b_gate() { return b_g_; }
  Parameter& beta() { return beta_; }

 private:
  Parameter w_v_, w_g_, b_v_, b_g_, beta_;
};

class LayerNormLayer {
 public:
  explicit LayerNormLayer(std::size_t d);
  Var operator()(const Var& x) const;
  void Visit(const std::string& prefix, StateVisitor& v);

 private:
  Parameter gain_, bias_;
};

/// SwiGLU(LayerNorm(GatedLinear(x)))
class SBlock {
 public:
  SBlock(std::size_t d_in, std::size_t d_out, Rng& rng);
  Var operator()(const Var& x) const;
  Var Pairwise(const Var& h, std::span<const std::size_t> src,
               std::span<const std::size_t> dst, const Var& edge) const;
  void Visit(const std::string& prefix, StateVisitor& v);

 private:
  GatedLinear gated_;
  LayerNormLayer norm_;
  SwiGLU swiglu_;
};

/// k-layer SGMLP: k-1 SBlocks (d_in -> hidden -> ... -> hidden) followed by a
/// GatedLinear to d_out. With k = 1 it is a single GatedLinear d_in -> d_out.
class SGMLP {
 public:
  SGMLP(std::size_t d_in, std::size_t hidden, std::size_t d_out, int k,
        Rng& rng);

  Var operator()(const Var& x) const;
  /// See GatedLinear::Pairwise; only the first layer sees the pairs.
  Var Pairwise(const Var& h, std::span<const std::size_t> src,
               std::span<const std::size_t> dst, const Var& edge) const;
  void Visit(const std::string& prefix, StateVisitor& v);

  std::size_t num_blocks() const { return blocks_.size(); }
  GatedLinear& final_layer() { return final_; }

 private:
  std::vector<SBlock> blocks_;
  GatedLinear final_;
};

/// AvgPool(ReLU(BatchNorm(Conv1d(z)))) over z[B, C_in, L] -> [B, C_out, L/2].
class ConvBlock {
 public:
  ConvBlock(std::size_t c_in, std::size_t c_out, std::size_t kernel, Rng& rng);

  Var operator()(const Var& z, bool training);
  /// BatchNorm(Conv1d(z)), the input to the ReLU.
  Var PreActivation(const Var& z, bool training);
  void Visit(const std::string& prefix, StateVisitor& v);

  Parameter& conv_bias() { return bias_; }

 private:
  Parameter weight_, bias_, gamma_, beta_;
  ad::BatchNormState bn_state_;
};

struct EncoderConfig {
  std::size_t d = 64;
  int rounds = 3;
  std::size_t n_rbf = 16;
  double rbf_max = 6.0;
  std::size_t hidden = 64;
  int k = 2;  // layers per message/update SGMLP
};

/// Gaussian radial basis on centers evenly spaced over [0, rbf_max]; the width
/// equals the center spacing. Values lie in (0, 1].
std::vector<double> RadialBasis(double distance, std::size_t n_rbf,
                                double rbf_max);

/// Message-passing graph encoder: element embeddings refined by `rounds` of
///   m_ij = SGMLP([h_i | h_j | rbf(d_ij)]),
///   h_i <- LayerNorm(h_i + SGMLP([h_i | sum_j m_ij])).
class MPEncoder {
 public:
  MPEncoder(const EncoderConfig& cfg, Rng& rng);

  /// H[V, d]. Throws Error(kInvalidGraph) for a graph with no nodes.
  Var Encode(const StructureGraph& g) const;
  /// Encodes several graphs as one disconnected graph; rows follow the input
  /// order, graph after graph.
  Var EncodeBatch(std::span<const StructureGraph* const> graphs) const;

  void Visit(const std::string& prefix, StateVisitor& v);
  const EncoderConfig& config() const { return cfg_; }

 private:
  struct Round {
    SGMLP message;
    SGMLP update;
    LayerNormLayer norm;
  };
  EncoderConfig cfg_;
  Parameter embedding_;  // [118, d]
  std::vector<Round> rounds_;
};

}  // namespace xastruct::nn
