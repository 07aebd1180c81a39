#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace xastruct::ad {

using Shape = std::vector<std::size_t>;

std::string ShapeString(const Shape& shape);
std::size_t NumElements(const Shape& shape);

/// Cache-line aligned allocation, so vectorized kernels split their loops
/// identically wherever a buffer lands and results do not depend on addresses.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles. Plain value type; no gradient tracking.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor Scalar(double v) { return Tensor(Shape{1}, {v}); }
  static Tensor Vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double> ToVector() const { return {data_.begin(), data_.end()}; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Same data, new shape with equal element count.
  Tensor Reshaped(Shape shape) const;
  void Fill(double v);
  bool AllFinite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  Buffer data_;
};

/// Throws Error(kShape) naming both shapes unless they are equal.
void CheckSameShape(const Shape& a, const Shape& b, const char* op);

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// A recorded value in the differentiation graph. Nodes hold their parents,
/// so the graph reachable from a loss is the tape replayed by Backward().
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;  // reads this->grad, writes parents'

  Tensor& GradBuffer();
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Gradient accumulated by Backward(); zeros if nothing reached this node.
  Tensor grad() const;
  const NodePtr& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

/// Non-differentiable input.
Var Constant(Tensor value);
/// Differentiable leaf.
Var Leaf(Tensor value);

/// While alive, new ops on this thread are not recorded for backward.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool GradEnabled();

/// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
/// node in reverse topological order, visiting each node once. Throws
/// Error(kRank) unless loss holds exactly one element.
void Backward(const Var& loss);

// ---- ops ------------------------------------------------------------------

Var MatMul(const Var& a, const Var& b);                 // [m,k] x [k,n]
Var Linear(const Var& x, const Var& w, const Var& b);   // x[B,in] w[out,in] b[out]
Var Add(const Var& a, const Var& b);
Var Mul(const Var& a, const Var& b);
Var Scale(const Var& a, double factor);
/// Concatenate along `axis`; all other dimensions must agree.
Var Concat(std::span<const Var> parts, std::size_t axis);
Var Concat(std::initializer_list<Var> parts, std::size_t axis);
Var Reshape(const Var& a, Shape shape);
/// Columns [begin, end) of a[R,C].
Var SliceColumns(const Var& a, std::size_t begin, std::size_t end);
Var Sigmoid(const Var& a);
Var Relu(const Var& a);
/// x * sigmoid(beta * x) with a learnable scalar beta of shape [1].
Var SwishBeta(const Var& x, const Var& beta);
/// Normalizes over the last axis, then applies gain and bias of that length.
Var LayerNorm(const Var& x, const Var& gain, const Var& bias,
              double eps = 1e-5);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;  // weight kept by the running average
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}
};

/// x[B,C,L] (or [B,C]). Training mode normalizes with batch statistics and
/// updates the running averages; eval mode uses the running averages.
Var BatchNorm1d(const Var& x, const Var& gamma, const Var& beta,
                BatchNormState& state, bool training);
/// x[B,Cin,L], w[Cout,Cin,K] with odd K, b[Cout]; stride 1, zero "same" padding.
Var Conv1d(const Var& x, const Var& w, const Var& b);
/// Window 2, stride 2 over the last axis of x[B,C,L]; output length L/2.
Var AvgPool1d(const Var& x);

/// (1/V) * sum_i m_i H_i over H[V,d]. With `divide_by_mask_sum` the
/// denominator is sum_i m_i instead.
Var MaskedMean(const Var& h, std::span<const double> mask,
               bool divide_by_mask_sum = false);
/// out[index[i]] += weight[i] * rows[i]; rows[N,d] -> out[n_out,d].
Var ScatterAddRows(const Var& rows, std::span<const std::size_t> index,
                   std::span<const double> weight, std::size_t n_out);
/// out[i] = rows[index[i]]; rows[V,d] -> out[E,d].
Var GatherRows(const Var& rows, std::span<const std::size_t> index);
Var Sum(const Var& a);
Var Mean(const Var& a);

/// Mean of squared differences; returns shape [1].
Var MseLoss(const Var& pred, const Tensor& target);
/// Mean over rows of -log softmax(logits[r])[labels[r]]; logits[B,C].
/// Throws Error(kLabel) for labels outside [0, C).
Var CrossEntropyLoss(const Var& logits, std::span<const int> labels);

/// Row-wise softmax of a [B,C] tensor (no graph).
Tensor Softmax(const Tensor& logits);

// ---- parameters and optimizer --------------------------------------------

/// Trainable tensor with AdamW moment buffers.
class Parameter {
 public:
  Parameter() : Parameter(Tensor()) {}
  explicit Parameter(Tensor init);
  Parameter(const Parameter&) = delete;
  Parameter& operator=(const Parameter&) = delete;
  Parameter(Parameter&&) = default;
  Parameter& operator=(Parameter&&) = default;

  const Var& var() const { return var_; }
  const Tensor& value() const { return var_.value(); }
  Tensor& mutable_value() { return var_.mutable_value(); }
  const Shape& shape() const { return var_.shape(); }
  Tensor grad() const { return var_.grad(); }
  void ZeroGrad();

  Tensor& first_moment() { return m_; }
  Tensor& second_moment() { return v_; }
  std::int64_t& step() { return step_; }

 private:
  Var var_;
  Tensor m_;
  Tensor v_;
  std::int64_t step_ = 0;
};

/// Zeroes the listed parameters' gradients, then runs Backward(loss).
/// Parameters the loss does not reach end with zero gradients.
void Backward(const Var& loss, std::span<Parameter* const> params);

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled weight decay (value *= 1 - lr*wd) followed by a bias-corrected
/// Adam step.
void AdamWStep(std::span<Parameter* const> params, const AdamWConfig& cfg);

}  // namespace xastruct::ad
