#include "xastruct/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "xastruct/error.hpp"

namespace xastruct::ad {
namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

thread_local bool g_grad_enabled = true;

[[noreturn]] void ShapeError(const std::string& what) {
  throw Error(ErrorCode::kShape, what);
}

void RequireRank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
               ", got " + ShapeString(t.shape()));
  }
}

/// Wraps a computed value into a node. The backward closure is kept only when
/// gradients are enabled and some parent needs one.
Var MakeResult(Tensor value, std::vector<NodePtr> parents,
               std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

bool Wants(const NodePtr& p) { return p->requires_grad; }

double StableSigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Splits shape into (rows, last) with rows = product of leading dims.
std::pair<std::size_t, std::size_t> RowsAndLast(const Shape& s) {
  const std::size_t last = s.back();
  return {last == 0 ? 0 : NumElements(s) / last, last};
}

}  // namespace

std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(NumElements(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) ShapeError("zero-sized dimension in " + ShapeString(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (NumElements(shape_) != data_.size()) {
    ShapeError("shape " + ShapeString(shape_) + " does not hold " +
               std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::Reshaped(Shape shape) const {
  if (NumElements(shape) != data_.size()) {
    ShapeError("cannot reshape " + ShapeString(shape_) + " to " +
               ShapeString(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

void Tensor::Fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::AllFinite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

void CheckSameShape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    ShapeError(std::string(op) + ": shape mismatch " + ShapeString(a) +
               " vs " + ShapeString(b));
  }
}

Tensor& Node::GradBuffer() {
  if (!has_grad) {
    grad = Tensor(value.shape(), 0.0);
    has_grad = true;
  }
  return grad;
}

Tensor Var::grad() const {
  if (node_->has_grad) return node_->grad;
  return Tensor(node_->value.shape(), 0.0);
}

Var Constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Leaf(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool GradEnabled() { return g_grad_enabled; }

void Backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw Error(ErrorCode::kRank, "backward needs a scalar loss, got shape " +
                                      ShapeString(loss.shape()));
  }
  const NodePtr& root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->GradBuffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->has_grad) node->backward(*node);
  }
}

// ---- ops ------------------------------------------------------------------

Var MatMul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  RequireRank(av, 2, "matmul");
  RequireRank(bv, 2, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    ShapeError("matmul: shape mismatch " + ShapeString(av.shape()) + " x " +
               ShapeString(bv.shape()));
  }
  Tensor out(Shape{m, n});
  MatrixMap(out.data().data(), m, n).noalias() =
      ConstMatrixMap(av.data().data(), m, k) *
      ConstMatrixMap(bv.data().data(), k, n);
  auto an = a.node(), bn = b.node();
  return MakeResult(std::move(out), {an, bn}, [an, bn, m, k, n](Node& self) {
    ConstMatrixMap g(self.grad.data().data(), m, n);
    if (Wants(an)) {
      MatrixMap(an->GradBuffer().data().data(), m, k).noalias() +=
          g * ConstMatrixMap(bn->value.data().data(), k, n).transpose();
    }
    if (Wants(bn)) {
      MatrixMap(bn->GradBuffer().data().data(), k, n).noalias() +=
          ConstMatrixMap(an->value.data().data(), m, k).transpose() * g;
    }
  });
}

Var Linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  RequireRank(wv, 2, "linear weight");
  const std::size_t out_dim = wv.dim(0), in_dim = wv.dim(1);
  if (xv.shape().back() != in_dim || bv.size() != out_dim || bv.rank() != 1) {
    ShapeError("linear: input " + ShapeString(xv.shape()) + ", weight " +
               ShapeString(wv.shape()) + ", bias " + ShapeString(bv.shape()));
  }
  const std::size_t rows = xv.size() / in_dim;
  Shape out_shape = xv.shape();
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  MatrixMap y(out.data().data(), rows, out_dim);
  y.noalias() = ConstMatrixMap(xv.data().data(), rows, in_dim) *
                ConstMatrixMap(wv.data().data(), out_dim, in_dim).transpose();
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data().data(), out_dim);
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return MakeResult(
      std::move(out), {xn, wn, bn}, [xn, wn, bn, rows, in_dim, out_dim](Node& self) {
        ConstMatrixMap g(self.grad.data().data(), rows, out_dim);
        if (Wants(xn)) {
          MatrixMap(xn->GradBuffer().data().data(), rows, in_dim).noalias() +=
              g * ConstMatrixMap(wn->value.data().data(), out_dim, in_dim);
        }
        if (Wants(wn)) {
          MatrixMap(wn->GradBuffer().data().data(), out_dim, in_dim).noalias() +=
              g.transpose() * ConstMatrixMap(xn->value.data().data(), rows, in_dim);
        }
        if (Wants(bn)) {
          Eigen::Map<Eigen::RowVectorXd>(bn->GradBuffer().data().data(), out_dim) +=
              g.colwise().sum();
        }
      });
}

Var Add(const Var& a, const Var& b) {
  CheckSameShape(a.shape(), b.shape(), "add");
  Tensor out = a.value();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  auto an = a.node(), bn = b.node();
  return MakeResult(std::move(out), {an, bn}, [an, bn](Node& self) {
    for (const auto& p : {an, bn}) {
      if (!Wants(p)) continue;
      Tensor& g = p->GradBuffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var Mul(const Var& a, const Var& b) {
  CheckSameShape(a.shape(), b.shape(), "mul");
  Tensor out = a.value();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  auto an = a.node(), bn = b.node();
  return MakeResult(std::move(out), {an, bn}, [an, bn](Node& self) {
    if (Wants(an)) {
      Tensor& g = an->GradBuffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += self.grad[i] * bn->value[i];
    }
    if (Wants(bn)) {
      Tensor& g = bn->GradBuffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += self.grad[i] * an->value[i];
    }
  });
}

Var Scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  auto an = a.node();
  return MakeResult(std::move(out), {an}, [an, factor](Node& self) {
    Tensor& g = an->GradBuffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var Concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
               ShapeString(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) ok = false;
    }
    if (!ok) {
      ShapeError("concat: shape mismatch " + ShapeString(first) + " vs " +
                 ShapeString(s));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_chunk = out_shape[axis] * inner;

  Tensor out(out_shape);
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> offsets;  // per part, within one outer chunk
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.shape()[axis] * inner;
    const auto src = p.value().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * chunk, chunk,
                  out.data().begin() + o * out_chunk + offset);
    }
    nodes.push_back(p.node());
    offsets.push_back(offset);
    offset += chunk;
  }
  return MakeResult(
      std::move(out), nodes,
      [nodes, offsets, outer, inner, out_chunk, axis](Node& self) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          const auto& p = nodes[i];
          if (!Wants(p)) continue;
          const std::size_t chunk = p->value.shape()[axis] * inner;
          Tensor& g = p->GradBuffer();
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t j = 0; j < chunk; ++j) {
              g[o * chunk + j] += self.grad[o * out_chunk + offsets[i] + j];
            }
          }
        }
      });
}

Var Concat(std::initializer_list<Var> parts, std::size_t axis) {
  return Concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var Reshape(const Var& a, Shape shape) {
  Tensor out = a.value().Reshaped(std::move(shape));
  auto an = a.node();
  return MakeResult(std::move(out), {an}, [an](Node& self) {
    Tensor& g = an->GradBuffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var Sigmoid(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = StableSigmoid(v);
  auto an = a.node();
  return MakeResult(std::move(out), {an}, [an](Node& self) {
    Tensor& g = an->GradBuffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Var Relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  auto an = a.node();
  return MakeResult(std::move(out), {an}, [an](Node& self) {
    Tensor& g = an->GradBuffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (an->value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Var SwishBeta(const Var& x, const Var& beta) {
  if (beta.value().size() != 1) {
    ShapeError("swish_beta: beta must be a scalar, got " +
               ShapeString(beta.shape()));
  }
  const double bv = beta.value()[0];
  Tensor out = x.value();
  for (double& v : out.data()) v = v * StableSigmoid(bv * v);
  auto xn = x.node(), bn = beta.node();
  return MakeResult(std::move(out), {xn, bn}, [xn, bn](Node& self) {
    const double b = bn->value[0];
    double dbeta = 0.0;
    Tensor* gx = Wants(xn) ? &xn->GradBuffer() : nullptr;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = xn->value[i];
      const double s = StableSigmoid(b * v);
      const double ds = s * (1.0 - s);
      if (gx) (*gx)[i] += self.grad[i] * (s + v * ds * b);
      dbeta += self.grad[i] * v * v * ds;
    }
    if (Wants(bn)) bn->GradBuffer()[0] += dbeta;
  });
}

Var LayerNorm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Tensor& xv = x.value();
  const auto [rows, n] = RowsAndLast(xv.shape());
  if (gain.value().size() != n || bias.value().size() != n) {
    ShapeError("layer_norm: features " + std::to_string(n) + ", gain " +
               ShapeString(gain.shape()) + ", bias " + ShapeString(bias.shape()));
  }
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  const auto gd = gain.value().data();
  const auto bd = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += row[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      const double h = (row[i] - mean) * inv_std[r];
      xhat[r * n + i] = h;
      out[r * n + i] = h * gd[i] + bd[i];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return MakeResult(
      std::move(out), {xn, gn, bn},
      [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
       n](Node& self) {
        const double nd = static_cast<double>(n);
        std::vector<double> dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data().data() + r * n;
          const double* h = xhat.data().data() + r * n;
          if (Wants(gn)) {
            Tensor& gg = gn->GradBuffer();
            for (std::size_t i = 0; i < n; ++i) gg[i] += g[i] * h[i];
          }
          if (Wants(bn)) {
            Tensor& gb = bn->GradBuffer();
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
          }
          if (Wants(xn)) {
            double sum_d = 0.0, sum_dh = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              dxhat[i] = g[i] * gn->value[i];
              sum_d += dxhat[i];
              sum_dh += dxhat[i] * h[i];
            }
            Tensor& gx = xn->GradBuffer();
            for (std::size_t i = 0; i < n; ++i) {
              gx[r * n + i] +=
                  inv_std[r] / nd * (nd * dxhat[i] - sum_d - h[i] * sum_dh);
            }
          }
        }
      });
}

Var BatchNorm1d(const Var& x, const Var& gamma, const Var& beta,
                BatchNormState& state, bool training) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 && xv.rank() != 3) {
    ShapeError("batch_norm_1d: expected [B,C] or [B,C,L], got " +
               ShapeString(xv.shape()));
  }
  const std::size_t batch = xv.dim(0), channels = xv.dim(1);
  const std::size_t len = xv.rank() == 3 ? xv.dim(2) : 1;
  if (gamma.value().size() != channels || beta.value().size() != channels ||
      state.running_mean.size() != channels) {
    ShapeError("batch_norm_1d: input " + ShapeString(xv.shape()) + ", gamma " +
               ShapeString(gamma.shape()) + ", beta " + ShapeString(beta.shape()));
  }
  const std::size_t count = batch * len;
  auto idx = [channels, len](std::size_t b, std::size_t c, std::size_t t) {
    return (b * channels + c) * len + t;
  };
  std::vector<double> mean(channels), inv_std(channels);
  if (training) {
    for (std::size_t c = 0; c < channels; ++c) {
      double m = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < len; ++t) m += xv[idx(b, c, t)];
      m /= static_cast<double>(count);
      double v = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < len; ++t) {
          const double d = xv[idx(b, c, t)] - m;
          v += d * d;
        }
      v /= static_cast<double>(count);
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + state.eps);
      const double unbiased =
          count > 1 ? v * static_cast<double>(count) / static_cast<double>(count - 1)
                    : v;
      state.running_mean[c] =
          state.momentum * state.running_mean[c] + (1.0 - state.momentum) * m;
      state.running_var[c] = state.momentum * state.running_var[c] +
                             (1.0 - state.momentum) * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t i = idx(b, c, t);
        xhat[i] = (xv[i] - mean[c]) * inv_std[c];
        out[i] = xhat[i] * gamma.value()[c] + beta.value()[c];
      }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return MakeResult(
      std::move(out), {xn, gn, bn},
      [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), batch,
       channels, len, count, training, idx](Node& self) {
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0.0, sum_gh = 0.0;
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t t = 0; t < len; ++t) {
              const std::size_t i = idx(b, c, t);
              sum_g += self.grad[i];
              sum_gh += self.grad[i] * xhat[i];
            }
          if (Wants(gn)) gn->GradBuffer()[c] += sum_gh;
          if (Wants(bn)) bn->GradBuffer()[c] += sum_g;
          if (!Wants(xn)) continue;
          Tensor& gx = xn->GradBuffer();
          const double gam = gn->value[c];
          const double nd = static_cast<double>(count);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t t = 0; t < len; ++t) {
              const std::size_t i = idx(b, c, t);
              if (training) {
                gx[i] += gam * inv_std[c] / nd *
                         (nd * self.grad[i] - sum_g - xhat[i] * sum_gh);
              } else {
                gx[i] += gam * inv_std[c] * self.grad[i];
              }
            }
        }
      });
}

Var Conv1d(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  RequireRank(xv, 3, "conv1d input");
  RequireRank(wv, 3, "conv1d weight");
  const std::size_t batch = xv.dim(0), cin = xv.dim(1), len = xv.dim(2);
  const std::size_t cout = wv.dim(0), ksize = wv.dim(2);
  if (wv.dim(1) != cin || b.value().size() != cout || ksize % 2 == 0) {
    ShapeError("conv1d: input " + ShapeString(xv.shape()) + ", weight " +
               ShapeString(wv.shape()) + ", bias " + ShapeString(b.shape()));
  }
  const long pad = static_cast<long>(ksize / 2);
  const long l = static_cast<long>(len);
  Tensor out(Shape{batch, cout, len});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < cout; ++o) {
      double* y = out.data().data() + (n * cout + o) * len;
      for (std::size_t t = 0; t < len; ++t) y[t] = b.value()[o];
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xr = xv.data().data() + (n * cin + c) * len;
        const double* wr = wv.data().data() + (o * cin + c) * ksize;
        for (std::size_t k = 0; k < ksize; ++k) {
          const long shift = static_cast<long>(k) - pad;
          const long t0 = std::max(0L, -shift);
          const long t1 = std::min(l, l - shift);
          for (long t = t0; t < t1; ++t) y[t] += wr[k] * xr[t + shift];
        }
      }
    }
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return MakeResult(
      std::move(out), {xn, wn, bn},
      [xn, wn, bn, batch, cin, cout, len, ksize, pad, l](Node& self) {
        Tensor* gx = Wants(xn) ? &xn->GradBuffer() : nullptr;
        Tensor* gw = Wants(wn) ? &wn->GradBuffer() : nullptr;
        Tensor* gb = Wants(bn) ? &bn->GradBuffer() : nullptr;
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t o = 0; o < cout; ++o) {
            const double* g = self.grad.data().data() + (n * cout + o) * len;
            if (gb) {
              for (std::size_t t = 0; t < len; ++t) (*gb)[o] += g[t];
            }
            for (std::size_t c = 0; c < cin; ++c) {
              const std::size_t xoff = (n * cin + c) * len;
              const std::size_t woff = (o * cin + c) * ksize;
              for (std::size_t k = 0; k < ksize; ++k) {
                const long shift = static_cast<long>(k) - pad;
                const long t0 = std::max(0L, -shift);
                const long t1 = std::min(l, l - shift);
                double acc = 0.0;
                const double wk = wn->value[woff + k];
                for (long t = t0; t < t1; ++t) {
                  acc += g[t] * xn->value[xoff + t + shift];
                  if (gx) (*gx)[xoff + t + shift] += g[t] * wk;
                }
                if (gw) (*gw)[woff + k] += acc;
              }
            }
          }
      });
}

Var AvgPool1d(const Var& x) {
  const Tensor& xv = x.value();
  RequireRank(xv, 3, "avg_pool1d");
  const std::size_t rows = xv.dim(0) * xv.dim(1), len = xv.dim(2);
  if (len < 2) {
    ShapeError("avg_pool1d: length must be >= 2, got " + ShapeString(xv.shape()));
  }
  const std::size_t out_len = len / 2;
  Tensor out(Shape{xv.dim(0), xv.dim(1), out_len});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < out_len; ++t) {
      out[r * out_len + t] =
          0.5 * (xv[r * len + 2 * t] + xv[r * len + 2 * t + 1]);
    }
  auto xn = x.node();
  return MakeResult(std::move(out), {xn}, [xn, rows, len, out_len](Node& self) {
    Tensor& g = xn->GradBuffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < out_len; ++t) {
        const double v = 0.5 * self.grad[r * out_len + t];
        g[r * len + 2 * t] += v;
        g[r * len + 2 * t + 1] += v;
      }
  });
}

Var ScatterAddRows(const Var& rows, std::span<const std::size_t> index,
                   std::span<const double> weight, std::size_t n_out) {
  const Tensor& rv = rows.value();
  RequireRank(rv, 2, "scatter_add_rows");
  const std::size_t n = rv.dim(0), d = rv.dim(1);
  if (index.size() != n || weight.size() != n) {
    ShapeError("scatter_add_rows: " + std::to_string(n) + " rows, " +
               std::to_string(index.size()) + " indices, " +
               std::to_string(weight.size()) + " weights");
  }
  Tensor out(Shape{n_out, d}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] >= n_out) ShapeError("scatter_add_rows: index out of range");
    for (std::size_t c = 0; c < d; ++c) out[index[i] * d + c] += weight[i] * rv[i * d + c];
  }
  auto rn = rows.node();
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> wts(weight.begin(), weight.end());
  return MakeResult(std::move(out), {rn},
                    [rn, idx = std::move(idx), wts = std::move(wts), d](Node& self) {
                      Tensor& g = rn->GradBuffer();
                      for (std::size_t i = 0; i < idx.size(); ++i)
                        for (std::size_t c = 0; c < d; ++c)
                          g[i * d + c] += wts[i] * self.grad[idx[i] * d + c];
                    });
}

Var MaskedMean(const Var& h, std::span<const double> mask,
               bool divide_by_mask_sum) {
  RequireRank(h.value(), 2, "masked_mean");
  const std::size_t v = h.value().dim(0);
  if (mask.size() != v) {
    ShapeError("masked_mean: H " + ShapeString(h.shape()) + " vs mask [" +
               std::to_string(mask.size()) + "]");
  }
  double denom = static_cast<double>(v);
  if (divide_by_mask_sum) {
    denom = std::accumulate(mask.begin(), mask.end(), 0.0);
  }
  std::vector<double> weight(v, 0.0);
  if (denom != 0.0) {
    for (std::size_t i = 0; i < v; ++i) weight[i] = mask[i] / denom;
  }
  std::vector<std::size_t> index(v, 0);
  return Reshape(ScatterAddRows(h, index, weight, 1), Shape{h.value().dim(1)});
}

Var SliceColumns(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  RequireRank(av, 2, "slice_columns");
  const std::size_t r = av.dim(0), c = av.dim(1);
  if (begin >= end || end > c) {
    ShapeError("slice_columns: [" + std::to_string(begin) + ", " +
               std::to_string(end) + ") of " + ShapeString(av.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out(Shape{r, w});
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(av.data().begin() + i * c + begin, w, out.data().begin() + i * w);
  auto an = a.node();
  return MakeResult(std::move(out), {an}, [an, r, c, w, begin](Node& self) {
    Tensor& g = an->GradBuffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
  });
}

Var GatherRows(const Var& rows, std::span<const std::size_t> index) {
  const Tensor& rv = rows.value();
  RequireRank(rv, 2, "gather_rows");
  const std::size_t n = rv.dim(0), d = rv.dim(1);
  if (index.empty()) ShapeError("gather_rows: empty index");
  Tensor out(Shape{index.size(), d});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) ShapeError("gather_rows: index out of range");
    std::copy_n(rv.data().begin() + index[i] * d, d, out.data().begin() + i * d);
  }
  auto rn = rows.node();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return MakeResult(std::move(out), {rn}, [rn, idx = std::move(idx), d](Node& self) {
    Tensor& g = rn->GradBuffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) g[idx[i] * d + c] += self.grad[i * d + c];
  });
}

Var Sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  auto an = a.node();
  return MakeResult(Tensor::Scalar(s), {an}, [an](Node& self) {
    Tensor& g = an->GradBuffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Var Mean(const Var& a) {
  return Scale(Sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var MseLoss(const Var& pred, const Tensor& target) {
  CheckSameShape(pred.shape(), target.shape(), "mse_loss");
  const std::size_t n = target.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.value()[i] - target[i];
    s += d * d;
  }
  auto pn = pred.node();
  return MakeResult(Tensor::Scalar(s / static_cast<double>(n)), {pn},
                    [pn, target, n](Node& self) {
                      Tensor& g = pn->GradBuffer();
                      const double scale = 2.0 * self.grad[0] / static_cast<double>(n);
                      for (std::size_t i = 0; i < n; ++i)
                        g[i] += scale * (pn->value[i] - target[i]);
                    });
}

Tensor Softmax(const Tensor& logits) {
  const auto [rows, c] = RowsAndLast(logits.shape());
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = logits[r * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits[r * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[r * c + j] = std::exp(logits[r * c + j] - mx);
      z += out[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] /= z;
  }
  return out;
}

Var CrossEntropyLoss(const Var& logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  if (lv.rank() > 2) {
    ShapeError("cross_entropy: logits must be [C] or [B,C], got " +
               ShapeString(lv.shape()));
  }
  const auto [rows, c] = RowsAndLast(lv.shape());
  if (labels.size() != rows) {
    ShapeError("cross_entropy: " + std::to_string(rows) + " rows vs " +
               std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw Error(ErrorCode::kLabel, "class index " + std::to_string(y) +
                                         " outside [0, " + std::to_string(c) + ")");
    }
  }
  Tensor probs = Softmax(lv);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = lv[r * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv[r * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(lv[r * c + j] - mx);
    loss += -(lv[r * c + labels[r]] - mx - std::log(z));
  }
  loss /= static_cast<double>(rows);
  auto ln = logits.node();
  std::vector<int> ys(labels.begin(), labels.end());
  return MakeResult(Tensor::Scalar(loss), {ln},
                    [ln, probs = std::move(probs), ys = std::move(ys), rows,
                     c](Node& self) {
                      Tensor& g = ln->GradBuffer();
                      const double scale = self.grad[0] / static_cast<double>(rows);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < c; ++j) {
                          const double onehot =
                              static_cast<int>(j) == ys[r] ? 1.0 : 0.0;
                          g[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    });
}

// ---- parameters and optimizer --------------------------------------------

Parameter::Parameter(Tensor init)
    : var_(Leaf(init)),
      m_(init.shape(), 0.0),
      v_(init.shape(), 0.0) {}

void Parameter::ZeroGrad() {
  Node& n = *var_.node();
  if (n.has_grad) n.grad.Fill(0.0);
}

void Backward(const Var& loss, std::span<Parameter* const> params) {
  for (Parameter* p : params) p->ZeroGrad();
  Backward(loss);
}

void AdamWStep(std::span<Parameter* const> params, const AdamWConfig& cfg) {
  for (Parameter* p : params) {
    Tensor& value = p->mutable_value();
    const Tensor grad = p->grad();
    Tensor& m = p->first_moment();
    Tensor& v = p->second_moment();
    const std::int64_t t = ++p->step();
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < value.size(); ++i) {
      value[i] -= cfg.lr * cfg.weight_decay * value[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace xastruct::ad
