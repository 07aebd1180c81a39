#include "xastruct/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "xastruct/crystal.hpp"
#include "xastruct/nn.hpp"

namespace xastruct::gradcheck {
namespace {

using ad::Parameter;
using ad::Shape;
using ad::Tensor;
using ad::Var;

Tensor RandomTensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.Uniform(lo, hi);
  return t;
}

// Values with |x| >= 0.05 so that eps-sized probes never cross a ReLU kink.
Tensor KinkFreeTensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    v = rng.Uniform(0.05, 1.0) * (rng.Uniform() < 0.5 ? -1.0 : 1.0);
  }
  return t;
}

struct Storage {
  std::vector<std::unique_ptr<Parameter>> tensors;
  std::shared_ptr<void> module;
};

class Builder {
 public:
  Builder() : storage_(std::make_shared<Storage>()) {}

  Var Add(Tensor t) {
    storage_->tensors.push_back(std::make_unique<Parameter>(std::move(t)));
    params_.push_back(storage_->tensors.back().get());
    return params_.back()->var();
  }

  // Registers a module's parameters for perturbation and keeps it alive.
  template <typename M>
  M& Module(std::shared_ptr<M> m) {
    nn::ParameterCollector collector;
    m->Visit("m", collector);
    params_.insert(params_.end(), collector.params.begin(), collector.params.end());
    storage_->module = m;
    return *m;
  }

  Fixture Done(std::function<Var()> forward) {
    return {params_, std::move(forward), storage_};
  }

 private:
  std::shared_ptr<Storage> storage_;
  std::vector<Parameter*> params_;
};

// Backward claims 2.5 where the true derivative is 2.
Var FaultyDouble(const Var& x) {
  auto node = std::make_shared<ad::Node>();
  node->value = x.value();
  for (double& v : node->value.data()) v *= 2.0;
  if (ad::GradEnabled() && x.requires_grad()) {
    node->requires_grad = true;
    node->parents = {x.node()};
    node->backward = [xn = x.node()](ad::Node& self) {
      Tensor& g = xn->GradBuffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.5 * self.grad[i];
    };
  }
  return Var(std::move(node));
}

StructureGraph SmallGraph(Rng& rng) {
  const double a = rng.Uniform(2.8, 3.4);
  std::vector<Site> sites = {
      {Element(29), {rng.Uniform(-0.02, 0.02), rng.Uniform(-0.02, 0.02), 0.0}},
      {Element(8), {0.5 + rng.Uniform(-0.02, 0.02), 0.5, 0.5 + rng.Uniform(-0.02, 0.02)}}};
  CrystalStructure s("gradcheck", Lattice::Cubic(a), std::move(sites));
  return BuildGraph(s, 0, 3.6);
}

// Modules visit through a prefix; wrap them so Builder::Module sees one API.
template <typename M>
struct Wrapped {
  M m;
  void Visit(const std::string& prefix, nn::StateVisitor& v) { m.Visit(prefix, v); }
};

struct EncoderHolder {
  nn::MPEncoder encoder;
  void Visit(const std::string& prefix, nn::StateVisitor& v) { encoder.Visit(prefix, v); }
};

Fixture ConvBlockFixture(Rng& rng, bool training) {
  Builder b;
  auto holder = std::make_shared<Wrapped<nn::ConvBlock>>(Wrapped<nn::ConvBlock>{nn::ConvBlock(2, 3, 3, rng)});
  if (!training) {
    // Give eval mode non-trivial running statistics.
    ad::NoGradGuard no_grad;
    for (int i = 0; i < 3; ++i) holder->m(ad::Constant(RandomTensor({3, 2, 6}, rng)), true);
  }
  // Redraw inputs until no pre-activation sits near the ReLU kink. In
  // training mode this also nudges the running statistics, which the
  // training-mode output never reads.
  Tensor x = RandomTensor({3, 2, 6}, rng);
  for (int attempt = 0; attempt < 200; ++attempt) {
    ad::NoGradGuard no_grad;
    const Var pre = holder->m.PreActivation(ad::Constant(x), training);
    double closest = 1e9;
    for (double v : pre.value().data()) closest = std::min(closest, std::abs(v));
    if (closest > 2e-2) break;
    x = RandomTensor({3, 2, 6}, rng);
  }
  const Var xv = b.Add(x);
  auto& block = b.Module(holder);
  return b.Done([&block, xv, training] { return block.m(xv, training); });
}

std::vector<Case> Cases(bool inject_fault) {
  std::vector<Case> c;
  c.push_back({"matmul", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 4}, r)), y = b.Add(RandomTensor({4, 2}, r));
                 return b.Done([=] { return ad::MatMul(x, y); });
               }});
  c.push_back({"linear", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 4}, r)), w = b.Add(RandomTensor({2, 4}, r)),
                     bias = b.Add(RandomTensor({2}, r));
                 return b.Done([=] { return ad::Linear(x, w, bias); });
               }});
  c.push_back({"linear_rank3", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({2, 3, 4}, r)), w = b.Add(RandomTensor({5, 4}, r)),
                     bias = b.Add(RandomTensor({5}, r));
                 return b.Done([=] { return ad::Linear(x, w, bias); });
               }});
  c.push_back({"add", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 4}, r)), y = b.Add(RandomTensor({3, 4}, r));
                 return b.Done([=] { return ad::Add(x, y); });
               }});
  c.push_back({"mul", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 4}, r)), y = b.Add(RandomTensor({3, 4}, r));
                 return b.Done([=] { return ad::Mul(x, y); });
               }});
  c.push_back({"mul_shared_input", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 4}, r));
                 return b.Done([=] { return ad::Mul(x, x); });
               }});
  c.push_back({"scale", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 4}, r));
                 const double f = r.Uniform(-2.0, 2.0);
                 return b.Done([=] { return ad::Scale(x, f); });
               }});
  c.push_back({"concat_axis0", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({2, 3}, r)), y = b.Add(RandomTensor({1, 3}, r));
                 return b.Done([=] { return ad::Concat({x, y}, 0); });
               }});
  c.push_back({"concat_axis1", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({2, 3, 2}, r)), y = b.Add(RandomTensor({2, 1, 2}, r));
                 return b.Done([=] { return ad::Concat({x, y}, 1); });
               }});
  c.push_back({"concat_last_axis", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({2, 3}, r)), y = b.Add(RandomTensor({2, 2}, r)),
                     z = b.Add(RandomTensor({2, 1}, r));
                 return b.Done([=] { return ad::Concat({x, y, z}, 1); });
               }});
  c.push_back({"reshape", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 4}, r));
                 return b.Done([=] { return ad::Reshape(ad::Mul(x, x), {2, 6}); });
               }});
  c.push_back({"slice_columns", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 5}, r));
                 return b.Done([=] { return ad::SliceColumns(x, 1, 4); });
               }});
  c.push_back({"sigmoid", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 4}, r, -4.0, 4.0));
                 return b.Done([=] { return ad::Sigmoid(x); });
               }});
  c.push_back({"relu", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(KinkFreeTensor({3, 4}, r));
                 return b.Done([=] { return ad::Relu(x); });
               }});
  c.push_back({"swish_beta", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 4}, r, -3.0, 3.0));
                 Var beta = b.Add(RandomTensor({1}, r, 0.3, 2.0));
                 return b.Done([=] { return ad::SwishBeta(x, beta); });
               }});
  c.push_back({"layer_norm", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 5}, r)), g = b.Add(RandomTensor({5}, r)),
                     bias = b.Add(RandomTensor({5}, r));
                 return b.Done([=] { return ad::LayerNorm(x, g, bias); });
               }});
  c.push_back({"batch_norm_train", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({4, 3, 5}, r)), g = b.Add(RandomTensor({3}, r)),
                     beta = b.Add(RandomTensor({3}, r));
                 auto state = std::make_shared<ad::BatchNormState>(3);
                 return b.Done([=] { return ad::BatchNorm1d(x, g, beta, *state, true); });
               }});
  c.push_back({"batch_norm_train_2d", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({5, 3}, r)), g = b.Add(RandomTensor({3}, r)),
                     beta = b.Add(RandomTensor({3}, r));
                 auto state = std::make_shared<ad::BatchNormState>(3);
                 return b.Done([=] { return ad::BatchNorm1d(x, g, beta, *state, true); });
               }});
  c.push_back({"batch_norm_eval", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({4, 3, 5}, r)), g = b.Add(RandomTensor({3}, r)),
                     beta = b.Add(RandomTensor({3}, r));
                 auto state = std::make_shared<ad::BatchNormState>(3);
                 state->running_mean = RandomTensor({3}, r);
                 state->running_var = RandomTensor({3}, r, 0.5, 2.0);
                 return b.Done([=] { return ad::BatchNorm1d(x, g, beta, *state, false); });
               }});
  c.push_back({"conv1d", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({2, 3, 7}, r)), w = b.Add(RandomTensor({4, 3, 3}, r)),
                     bias = b.Add(RandomTensor({4}, r));
                 return b.Done([=] { return ad::Conv1d(x, w, bias); });
               }});
  c.push_back({"conv1d_kernel5", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({2, 1, 6}, r)), w = b.Add(RandomTensor({2, 1, 5}, r)),
                     bias = b.Add(RandomTensor({2}, r));
                 return b.Done([=] { return ad::Conv1d(x, w, bias); });
               }});
  c.push_back({"avg_pool1d", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({2, 3, 7}, r));
                 return b.Done([=] { return ad::AvgPool1d(x); });
               }});
  c.push_back({"masked_mean", [](Rng& r) {
                 Builder b;
                 Var h = b.Add(RandomTensor({5, 3}, r));
                 const std::vector<double> mask{1, 0, 1, 1, 0};
                 return b.Done([=] { return ad::MaskedMean(h, mask); });
               }});
  c.push_back({"masked_mean_by_mask_sum", [](Rng& r) {
                 Builder b;
                 Var h = b.Add(RandomTensor({5, 3}, r));
                 const std::vector<double> mask{0, 1, 1, 0, 1};
                 return b.Done([=] { return ad::MaskedMean(h, mask, true); });
               }});
  c.push_back({"scatter_add_rows", [](Rng& r) {
                 Builder b;
                 Var rows = b.Add(RandomTensor({6, 3}, r));
                 const std::vector<std::size_t> index{0, 2, 2, 3, 0, 1};
                 std::vector<double> weight(6);
                 for (double& w : weight) w = r.Uniform(-1.0, 1.0);
                 return b.Done([=] { return ad::ScatterAddRows(rows, index, weight, 4); });
               }});
  c.push_back({"gather_rows", [](Rng& r) {
                 Builder b;
                 Var rows = b.Add(RandomTensor({4, 3}, r));
                 const std::vector<std::size_t> index{0, 2, 2, 3, 1, 2};
                 return b.Done([=] { return ad::GatherRows(rows, index); });
               }});
  c.push_back({"sum", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 4}, r));
                 return b.Done([=] { return ad::Sum(ad::Mul(x, x)); });
               }});
  c.push_back({"mean", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 4}, r));
                 return b.Done([=] { return ad::Mean(ad::Mul(x, x)); });
               }});
  c.push_back({"mse_loss", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 4}, r));
                 const Tensor target = RandomTensor({3, 4}, r);
                 return b.Done([=] { return ad::MseLoss(x, target); });
               }});
  c.push_back({"cross_entropy_loss", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({4, 5}, r, -2.0, 2.0));
                 std::vector<int> labels(4);
                 for (int& l : labels) l = static_cast<int>(r.Below(5));
                 return b.Done([=] { return ad::CrossEntropyLoss(x, labels); });
               }});
  c.push_back({"cross_entropy_loss_1d", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({5}, r, -2.0, 2.0));
                 const std::vector<int> labels{static_cast<int>(r.Below(5))};
                 return b.Done([=] { return ad::CrossEntropyLoss(x, labels); });
               }});
  c.push_back({"gated_linear", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 5}, r));
                 auto& m = b.Module(std::make_shared<Wrapped<nn::GatedLinear>>(
                     Wrapped<nn::GatedLinear>{nn::GatedLinear(5, 4, r)}));
                 return b.Done([&m, x] { return m.m(x); });
               }});
  c.push_back({"gated_linear_pairwise", [](Rng& r) {
                 Builder b;
                 Var h = b.Add(RandomTensor({3, 2}, r));
                 Var edge = b.Add(RandomTensor({4, 3}, r));
                 auto& m = b.Module(std::make_shared<Wrapped<nn::GatedLinear>>(
                     Wrapped<nn::GatedLinear>{nn::GatedLinear(7, 4, r)}));
                 const std::vector<std::size_t> src{0, 1, 2, 2}, dst{1, 0, 0, 2};
                 return b.Done([&m, h, edge, src, dst] { return m.m.Pairwise(h, src, dst, edge); });
               }});
  c.push_back({"swiglu", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 5}, r));
                 auto& m = b.Module(std::make_shared<Wrapped<nn::SwiGLU>>(
                     Wrapped<nn::SwiGLU>{nn::SwiGLU(5, 4, r)}));
                 return b.Done([&m, x] { return m.m(x); });
               }});
  c.push_back({"sblock", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 5}, r));
                 auto& m = b.Module(std::make_shared<Wrapped<nn::SBlock>>(
                     Wrapped<nn::SBlock>{nn::SBlock(5, 4, r)}));
                 return b.Done([&m, x] { return m.m(x); });
               }});
  c.push_back({"sgmlp", [](Rng& r) {
                 Builder b;
                 Var x = b.Add(RandomTensor({3, 5}, r));
                 auto& m = b.Module(std::make_shared<Wrapped<nn::SGMLP>>(
                     Wrapped<nn::SGMLP>{nn::SGMLP(5, 6, 3, 3, r)}));
                 return b.Done([&m, x] { return m.m(x); });
               }});
  c.push_back({"sgmlp_pairwise", [](Rng& r) {
                 Builder b;
                 Var h = b.Add(RandomTensor({3, 2}, r));
                 Var edge = b.Add(RandomTensor({4, 2}, r));
                 auto& m = b.Module(std::make_shared<Wrapped<nn::SGMLP>>(
                     Wrapped<nn::SGMLP>{nn::SGMLP(6, 5, 3, 2, r)}));
                 const std::vector<std::size_t> src{0, 1, 2, 2}, dst{1, 0, 0, 1};
                 return b.Done([&m, h, edge, src, dst] { return m.m.Pairwise(h, src, dst, edge); });
               }});
  c.push_back({"conv_block_train", [](Rng& r) { return ConvBlockFixture(r, true); }});
  c.push_back({"conv_block_eval", [](Rng& r) { return ConvBlockFixture(r, false); }});
  c.push_back({"mpencoder_round", [](Rng& r) {
                 Builder b;
                 nn::EncoderConfig cfg{4, 1, 4, 4.0, 5, 2};
                 auto graph = std::make_shared<StructureGraph>(SmallGraph(r));
                 auto& m = b.Module(std::make_shared<EncoderHolder>(EncoderHolder{nn::MPEncoder(cfg, r)}));
                 return b.Done([&m, graph] { return m.encoder.Encode(*graph); });
               }});
  c.push_back({"mpencoder_two_rounds", [](Rng& r) {
                 Builder b;
                 nn::EncoderConfig cfg{3, 2, 3, 4.0, 4, 2};
                 auto graph = std::make_shared<StructureGraph>(SmallGraph(r));
                 auto& m = b.Module(std::make_shared<EncoderHolder>(EncoderHolder{nn::MPEncoder(cfg, r)}));
                 return b.Done([&m, graph] {
                   std::vector<double> mask(graph->mask.begin(), graph->mask.end());
                   return ad::MaskedMean(m.encoder.Encode(*graph), mask);
                 });
               }});
  if (inject_fault) {
    c.push_back({"injected_fault", [](Rng& r) {
                   Builder b;
                   Var x = b.Add(RandomTensor({3, 4}, r));
                   return b.Done([=] { return FaultyDouble(x); });
                 }});
  }
  return c;
}

}  // namespace

double RelativeError(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
}

double CheckFixture(const Fixture& f, const Options& opt, Rng& rng,
                    std::size_t* coordinates) {
  Tensor weights;
  {
    ad::NoGradGuard no_grad;
    weights = RandomTensor(f.forward().value().shape(), rng);
  }
  auto loss = [&] { return ad::Sum(ad::Mul(f.forward(), ad::Constant(weights))); };

  ad::Backward(loss(), f.params);
  std::vector<Tensor> analytic;
  for (auto* p : f.params) analytic.push_back(p->grad());

  ad::NoGradGuard no_grad;
  double worst = 0.0;
  std::size_t probed = 0;
  for (std::size_t k = 0; k < f.params.size(); ++k) {
    Tensor& value = f.params[k]->mutable_value();
    std::vector<std::size_t> entries(value.size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (entries.size() > opt.max_entries) {
      rng.Shuffle(std::span<std::size_t>(entries));
      entries.resize(opt.max_entries);
    }
    for (std::size_t i : entries) {
      const double saved = value[i];
      auto at = [&](double offset) {
        value[i] = saved + offset;
        return loss().value()[0];
      };
      const double h = opt.eps;
      // Five-point central stencil; truncation error is O(h^4).
      const double numeric =
          (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      value[i] = saved;
      worst = std::max(worst, RelativeError(analytic[k][i], numeric));
      ++probed;
    }
  }
  if (coordinates) *coordinates += probed;
  return worst;
}

std::vector<Case> StandardCases(bool inject_fault) { return Cases(inject_fault); }

std::vector<CaseResult> RunSuite(const Options& opt) {
  std::vector<CaseResult> results;
  const auto cases = Cases(opt.inject_fault);
  for (std::size_t c = 0; c < cases.size(); ++c) {
    CaseResult r;
    r.name = cases[c].name;
    for (int s = 0; s < opt.seeds; ++s) {
      Rng rng = Rng::Stream(opt.base_seed * 1000003ULL + c, static_cast<std::uint64_t>(s));
      const Fixture f = cases[c].make(rng);
      r.max_rel_error = std::max(r.max_rel_error, CheckFixture(f, opt, rng, &r.coordinates));
      ++r.seeds;
    }
    r.passed = r.max_rel_error < opt.tolerance;
    results.push_back(std::move(r));
  }
  return results;
}

std::string FormatReport(const std::vector<CaseResult>& results) {
  std::string out;
  char line[160];
  for (const auto& r : results) {
    std::snprintf(line, sizeof(line), "%-26s max_rel_err=%.3e seeds=%d coords=%zu %s\n",
                  r.name.c_str(), r.max_rel_error, r.seeds, r.coordinates,
                  r.passed ? "PASS" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace xastruct::gradcheck
