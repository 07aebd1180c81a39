#include "xastruct/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "xastruct/dataset_io.hpp"
#include "xastruct/error.hpp"

namespace xastruct::pipelines {
namespace {

using ad::Tensor;
using ad::Var;

constexpr int kCheckpointVersion = 1;
constexpr std::uint64_t kShuffleStream = 0x5348;  // per-run shuffle stream

std::size_t Argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

void CheckGrid(const LabeledSample& s, std::size_t n_xanes, std::size_t n_exafs) {
  if (s.xanes.size() != n_xanes || s.exafs.size() != n_exafs) {
    throw Error(ErrorCode::kGridMismatch,
                "spectra have " + std::to_string(s.xanes.size()) + "/" +
                    std::to_string(s.exafs.size()) + " points, model expects " +
                    std::to_string(n_xanes) + "/" + std::to_string(n_exafs));
  }
}

const Spectrum& SpectrumOf(const LabeledSample& s, SpectrumKind kind) {
  return kind == SpectrumKind::kXanes ? s.xanes : s.exafs;
}

/// Stacks standardized rows into a [B, n] constant.
Var StackRows(std::span<const LabeledSample* const> batch, const Standardizer& scaler,
              const std::function<const std::vector<double>&(const LabeledSample&)>& get) {
  const std::size_t n = scaler.size();
  Tensor t({batch.size(), n});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto row = scaler.Apply(get(*batch[b]));
    std::copy(row.begin(), row.end(), t.data().begin() + b * n);
  }
  return ad::Constant(std::move(t));
}

std::vector<std::vector<double>> Rows(
    const std::vector<LabeledSample>& samples,
    const std::function<const std::vector<double>&(const LabeledSample&)>& get) {
  std::vector<std::vector<double>> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(get(s));
  return rows;
}

const std::vector<double>& XanesEnergy(const LabeledSample& s) { return s.xanes.grid().values(); }
const std::vector<double>& XanesMu(const LabeledSample& s) { return s.xanes.mu(); }
const std::vector<double>& ExafsEnergy(const LabeledSample& s) { return s.exafs.grid().values(); }
const std::vector<double>& ExafsMu(const LabeledSample& s) { return s.exafs.mu(); }

std::vector<const LabeledSample*> Pointers(const std::vector<LabeledSample>& v) {
  std::vector<const LabeledSample*> out;
  out.reserve(v.size());
  for (const auto& s : v) out.push_back(&s);
  return out;
}

// ---- state snapshots and serialization ------------------------------------

class SnapshotVisitor : public nn::StateVisitor {
 public:
  void Param(const std::string&, ad::Parameter& p) override { saved.push_back(p.value()); }
  void Buffer(const std::string&, Tensor& t) override { saved.push_back(t); }
  std::vector<Tensor> saved;
};

class RestoreVisitor : public nn::StateVisitor {
 public:
  explicit RestoreVisitor(const std::vector<Tensor>& saved) : saved_(saved) {}
  void Param(const std::string&, ad::Parameter& p) override {
    p.mutable_value() = saved_[next_++];
  }
  void Buffer(const std::string&, Tensor& t) override { t = saved_[next_++]; }

 private:
  const std::vector<Tensor>& saved_;
  std::size_t next_ = 0;
};

nlohmann::json TensorJson(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", t.ToVector()}};
}

Tensor TensorFromJson(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<ad::Shape>(), j.at("data").get<std::vector<double>>());
}

class JsonWriter : public nn::StateVisitor {
 public:
  void Param(const std::string& name, ad::Parameter& p) override {
    params[name] = TensorJson(p.value());
  }
  void Buffer(const std::string& name, Tensor& t) override { buffers[name] = TensorJson(t); }
  nlohmann::json params = nlohmann::json::object();
  nlohmann::json buffers = nlohmann::json::object();
};

class JsonReader : public nn::StateVisitor {
 public:
  JsonReader(const nlohmann::json& params, const nlohmann::json& buffers)
      : params_(params), buffers_(buffers) {}
  void Param(const std::string& name, ad::Parameter& p) override {
    p.mutable_value() = Load(params_, name, p.shape());
  }
  void Buffer(const std::string& name, Tensor& t) override {
    t = Load(buffers_, name, t.shape());
  }

 private:
  static Tensor Load(const nlohmann::json& from, const std::string& name,
                     const ad::Shape& expected) {
    if (!from.contains(name)) {
      throw Error(ErrorCode::kParse, "checkpoint is missing '" + name + "'");
    }
    Tensor t = TensorFromJson(from.at(name));
    if (t.shape() != expected) {
      throw Error(ErrorCode::kParse, "checkpoint tensor '" + name + "' has shape " +
                                         ad::ShapeString(t.shape()) + ", expected " +
                                         ad::ShapeString(expected));
    }
    return t;
  }
  const nlohmann::json& params_;
  const nlohmann::json& buffers_;
};

nlohmann::json ConfigJson(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"patience", c.patience},
          {"encoder_dim", c.encoder.d},
          {"encoder_rounds", c.encoder.rounds},
          {"encoder_rbf", c.encoder.n_rbf},
          {"encoder_rbf_max", c.encoder.rbf_max},
          {"encoder_hidden", c.encoder.hidden},
          {"encoder_layers", c.encoder.k},
          {"head_hidden", c.head_hidden},
          {"head_layers", c.head_layers},
          {"embed_dim", c.embed_dim},
          {"embed_hidden", c.embed_hidden},
          {"embed_layers", c.embed_layers},
          {"conv_blocks", c.conv_blocks},
          {"conv_channels", c.conv_channels},
          {"conv_kernel", c.conv_kernel}};
}

TrainConfig ConfigFromJson(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.patience = j.at("patience").get<int>();
  c.encoder.d = j.at("encoder_dim").get<std::size_t>();
  c.encoder.rounds = j.at("encoder_rounds").get<int>();
  c.encoder.n_rbf = j.at("encoder_rbf").get<std::size_t>();
  c.encoder.rbf_max = j.at("encoder_rbf_max").get<double>();
  c.encoder.hidden = j.at("encoder_hidden").get<std::size_t>();
  c.encoder.k = j.at("encoder_layers").get<int>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.head_layers = j.at("head_layers").get<int>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.embed_hidden = j.at("embed_hidden").get<std::size_t>();
  c.embed_layers = j.at("embed_layers").get<int>();
  c.conv_blocks = j.at("conv_blocks").get<int>();
  c.conv_channels = j.at("conv_channels").get<std::size_t>();
  c.conv_kernel = j.at("conv_kernel").get<std::size_t>();
  c.Validate();
  return c;
}

nlohmann::json OptionalElement(std::optional<Element> e) {
  return e ? nlohmann::json(e->symbol()) : nlohmann::json(nullptr);
}

std::optional<Element> OptionalElementFromJson(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return Element::FromSymbol(j.get<std::string>());
}

// ---- generic minibatch loop -----------------------------------------------

struct LoopHooks {
  // Mean loss over the listed training rows, recorded for backward.
  std::function<Var(std::span<const std::size_t>)> batch_loss;
  // (val_loss, val_metric) without gradient tracking.
  std::function<std::pair<double, double>()> validate;
  bool higher_metric_is_better = false;
};


template <typename M>
std::vector<EpochLog> Fit(M& model, std::size_t n_train, bool has_val,
                          const TrainConfig& cfg, const LoopHooks& hooks) {
  nn::ParameterCollector collector;
  model.Visit(collector);
  const ad::AdamWConfig opt{cfg.lr, cfg.weight_decay};
  Rng shuffle = Rng::Stream(cfg.seed, kShuffleStream);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochLog> log;
  std::vector<Tensor> best_state;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle.Shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t end = std::min(n_train, start + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      const Var loss = hooks.batch_loss(rows);
      total += loss.value()[0] * static_cast<double>(rows.size());
      ad::Backward(loss, collector.params);
      ad::AdamWStep(collector.params, opt);
    }
    EpochLog entry{epoch, total / static_cast<double>(n_train),
                   std::numeric_limits<double>::quiet_NaN(),
                   std::numeric_limits<double>::quiet_NaN()};
    if (has_val) {
      std::tie(entry.val_loss, entry.val_metric) = hooks.validate();
      const double score = hooks.higher_metric_is_better ? -entry.val_metric
                                                         : entry.val_metric;
      if (score < best) {
        best = score;
        since_best = 0;
        SnapshotVisitor snap;
        model.Visit(snap);
        best_state = std::move(snap.saved);
      } else if (++since_best >= cfg.patience) {
        log.push_back(entry);
        break;
      }
    }
    log.push_back(entry);
  }
  if (!best_state.empty()) {
    RestoreVisitor restore(best_state);
    model.Visit(restore);
  }
  return log;
}

void RequireTrainable(const std::vector<LabeledSample>& train) {
  if (train.empty()) {
    throw Error(ErrorCode::kInsufficientData, "no training samples");
  }
}

std::optional<Element> CommonAbsorber(const std::vector<LabeledSample>& samples) {
  std::optional<Element> e;
  for (const auto& s : samples) {
    if (!e) {
      e = s.xanes.absorber();
    } else if (*e != s.xanes.absorber()) {
      return std::nullopt;
    }
  }
  return e;
}

void CheckElementScope(std::optional<Element> element,
                       const std::vector<LabeledSample>& samples) {
  if (!element) return;
  for (const auto& s : samples) {
    if (s.xanes.absorber() != *element) {
      throw Error(ErrorCode::kScope, "sample absorber " + std::string(s.xanes.absorber().symbol()) +
                                         " is outside scope " + std::string(element->symbol()));
    }
  }
}

/// Class-index targets plus probabilities with an extra zero column for
/// targets outside the training classes.
struct ClassEval {
  std::vector<int> pred, target;
  std::vector<std::vector<double>> probs;
};

Metrics ClassMetrics(ClassEval e) {
  return EvaluateClassification(e.pred, e.target, e.probs);
}

}  // namespace

// ---- names -------------------------------------------------------------------

std::string_view ToString(Task task) {
  switch (task) {
    case Task::kForward: return "forward";
    case Task::kMnnd: return "mnnd";
    case Task::kCn: return "cn";
    case Task::kNeighbor: return "neighbor";
  }
  return "unknown";
}

Task ParseTask(std::string_view text) {
  for (Task t : {Task::kForward, Task::kMnnd, Task::kCn, Task::kNeighbor}) {
    if (ToString(t) == text) return t;
  }
  throw Error(ErrorCode::kUsage, "unknown task '" + std::string(text) +
                                     "' (expected forward, mnnd, cn or neighbor)");
}

std::string_view ToString(Scope scope) {
  return scope == Scope::kUnified ? "unified" : "per-element";
}

Scope ParseScope(std::string_view text) {
  if (text == "unified") return Scope::kUnified;
  if (text == "per-element") return Scope::kPerElement;
  throw Error(ErrorCode::kParse, "unknown scope '" + std::string(text) + "'");
}

Scope DefaultScope(Task task) {
  return task == Task::kMnnd ? Scope::kUnified : Scope::kPerElement;
}

// ---- TrainConfig ---------------------------------------------------------------

void TrainConfig::Validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorCode::kParse, "lr must be > 0");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::kParse, "weight_decay must be >= 0");
  if (epochs < 1 || batch_size < 1 || patience < 1) {
    throw Error(ErrorCode::kParse, "epochs, batch_size and patience must be >= 1");
  }
  if (encoder.d < 1 || encoder.rounds < 0 || encoder.n_rbf < 1 || encoder.k < 1 ||
      head_layers < 1 || embed_dim < 1 || embed_layers < 1 || conv_blocks < 1 ||
      conv_channels < 1 || conv_kernel % 2 == 0) {
    throw Error(ErrorCode::kParse, "invalid model size");
  }
  if ((embed_dim * 2) >> conv_blocks < 1) {
    throw Error(ErrorCode::kParse, "too many conv blocks for embed_dim");
  }
}

TrainConfig TrainConfig::FromConfig(const KeyValueConfig& cfg) {
  TrainConfig c;
  auto size = [&](std::string_view key, std::size_t fallback) {
    const auto v = cfg.GetInt(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw Error(ErrorCode::kParse, std::string(key) + " must be >= 0");
    return static_cast<std::size_t>(v);
  };
  c.lr = cfg.GetDouble("lr", c.lr);
  c.weight_decay = cfg.GetDouble("weight_decay", c.weight_decay);
  c.epochs = static_cast<int>(cfg.GetInt("epochs", c.epochs));
  c.batch_size = size("batch_size", c.batch_size);
  c.seed = static_cast<std::uint64_t>(cfg.GetInt("seed", static_cast<std::int64_t>(c.seed)));
  c.patience = static_cast<int>(cfg.GetInt("patience", c.patience));
  if (cfg.Has("scope")) c.scope = ParseScope(*cfg.Get("scope"));
  c.encoder.d = size("encoder_dim", c.encoder.d);
  c.encoder.rounds = static_cast<int>(cfg.GetInt("encoder_rounds", c.encoder.rounds));
  c.encoder.n_rbf = size("encoder_rbf", c.encoder.n_rbf);
  c.encoder.hidden = size("encoder_hidden", c.encoder.hidden);
  c.encoder.k = static_cast<int>(cfg.GetInt("encoder_layers", c.encoder.k));
  c.head_hidden = size("head_hidden", c.head_hidden);
  c.head_layers = static_cast<int>(cfg.GetInt("head_layers", c.head_layers));
  c.embed_dim = size("embed_dim", c.embed_dim);
  c.embed_hidden = size("embed_hidden", c.embed_hidden);
  c.embed_layers = static_cast<int>(cfg.GetInt("embed_layers", c.embed_layers));
  c.conv_blocks = static_cast<int>(cfg.GetInt("conv_blocks", c.conv_blocks));
  c.conv_channels = size("conv_channels", c.conv_channels);
  c.conv_kernel = size("conv_kernel", c.conv_kernel);
  c.forest.n_trees = static_cast<int>(cfg.GetInt("forest_trees", c.forest.n_trees));
  c.forest.max_depth = static_cast<int>(cfg.GetInt("forest_depth", c.forest.max_depth));
  c.forest.min_samples_leaf =
      static_cast<int>(cfg.GetInt("forest_min_leaf", c.forest.min_samples_leaf));
  c.forest.max_features =
      static_cast<int>(cfg.GetInt("forest_features", c.forest.max_features));
  c.Validate();
  return c;
}

// ---- Standardizer --------------------------------------------------------------

Standardizer Standardizer::Fit(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw Error(ErrorCode::kInsufficientData, "no rows to standardize");
  const std::size_t n = rows.front().size();
  Standardizer s;
  s.mean_.assign(n, 0.0);
  s.scale_.assign(n, 0.0);
  for (const auto& r : rows) {
    if (r.size() != n) throw Error(ErrorCode::kGridMismatch, "rows differ in length");
    for (std::size_t i = 0; i < n; ++i) s.mean_[i] += r[i];
  }
  const double count = static_cast<double>(rows.size());
  for (double& m : s.mean_) m /= count;
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = r[i] - s.mean_[i];
      s.scale_[i] += d * d;
    }
  }
  for (double& v : s.scale_) {
    v = std::sqrt(v / count);
    if (!(v > 1e-12)) v = 1.0;
  }
  return s;
}

std::vector<double> Standardizer::Apply(std::span<const double> row) const {
  if (row.size() != mean_.size()) {
    throw Error(ErrorCode::kGridMismatch, "expected " + std::to_string(mean_.size()) +
                                              " values, got " + std::to_string(row.size()));
  }
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = (row[i] - mean_[i]) / scale_[i];
  return out;
}

std::vector<double> Standardizer::Invert(std::span<const double> row) const {
  if (row.size() != mean_.size()) {
    throw Error(ErrorCode::kGridMismatch, "expected " + std::to_string(mean_.size()) +
                                              " values, got " + std::to_string(row.size()));
  }
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] * scale_[i] + mean_[i];
  return out;
}

nlohmann::json Standardizer::ToJson() const {
  return {{"mean", mean_}, {"scale", scale_}};
}

Standardizer Standardizer::FromJson(const nlohmann::json& j) {
  Standardizer s;
  s.mean_ = j.at("mean").get<std::vector<double>>();
  s.scale_ = j.at("scale").get<std::vector<double>>();
  if (s.mean_.size() != s.scale_.size()) {
    throw Error(ErrorCode::kParse, "scaler mean/scale lengths differ");
  }
  return s;
}

// ---- ForwardModel --------------------------------------------------------------

ForwardModel::ForwardModel(const TrainConfig& cfg, Element element, Edge edge,
                           SpectrumKind kind, EnergyGrid grid, Rng& rng)
    : cfg_(cfg),
      element_(element),
      edge_(edge),
      kind_(kind),
      grid_(std::move(grid)),
      encoder_(cfg.encoder, rng),
      head_(cfg.encoder.d, cfg.head_hidden, grid_.size(), cfg.head_layers, rng) {
  // Identity until fitted.
  std::vector<std::vector<double>> rows{std::vector<double>(grid_.size(), 0.0)};
  target_scaler_ = Standardizer::Fit(rows);
}

Var ForwardModel::Forward(std::span<const StructureGraph* const> graphs) const {
  std::vector<std::size_t> graph_of;
  std::vector<double> weight;
  for (std::size_t b = 0; b < graphs.size(); ++b) {
    const StructureGraph& g = *graphs[b];
    const double inv_v = 1.0 / static_cast<double>(g.num_nodes());
    bool any = false;
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
      graph_of.push_back(b);
      const double m = i < g.mask.size() ? g.mask[i] : 0.0;
      any = any || m != 0.0;
      weight.push_back(m * inv_v);
    }
    if (!any) throw Error(ErrorCode::kEmptyEnvironment, "graph mask selects no atoms");
  }
  const Var h = encoder_.EncodeBatch(graphs);
  const Var pooled = ad::ScatterAddRows(h, graph_of, weight, graphs.size());
  return head_(pooled);
}

std::string ForwardModel::scope_key() const {
  return std::string(element_.symbol()) + "-" + std::string(ToString(edge_)) + "-" +
         std::string(ToString(kind_));
}

void ForwardModel::Visit(nn::StateVisitor& v) {
  encoder_.Visit("encoder", v);
  head_.Visit("head", v);
}

// ---- InverseMnnd ---------------------------------------------------------------

namespace {

std::vector<nn::ConvBlock> MakeConvStack(const TrainConfig& cfg, Rng& rng) {
  std::vector<nn::ConvBlock> out;
  for (int i = 0; i < cfg.conv_blocks; ++i) {
    out.emplace_back(i == 0 ? 1 : cfg.conv_channels, cfg.conv_channels,
                     cfg.conv_kernel, rng);
  }
  return out;
}

std::size_t ConvFeatures(const TrainConfig& cfg) {
  std::size_t length = 2 * cfg.embed_dim;
  for (int i = 0; i < cfg.conv_blocks; ++i) length /= 2;
  return cfg.conv_channels * length;
}

Var RunConvStack(std::vector<nn::ConvBlock>& stack, const Var& z_e, const Var& z_a,
                 bool training) {
  const std::size_t batch = z_e.value().dim(0);
  const std::size_t width = z_e.value().dim(1) + z_a.value().dim(1);
  Var z = ad::Reshape(ad::Concat({z_e, z_a}, 1), {batch, 1, width});
  for (auto& block : stack) z = block(z, training);
  return ad::Reshape(z, {batch, z.value().size() / batch});
}

}  // namespace

InverseMnnd::InverseMnnd(const TrainConfig& cfg, std::size_t n_xanes,
                         std::size_t n_exafs, std::optional<Element> element, Rng& rng)
    : cfg_(cfg),
      n_xanes_(n_xanes),
      n_exafs_(n_exafs),
      element_(element),
      energy_xanes_(n_xanes, cfg.embed_hidden, cfg.embed_dim, cfg.embed_layers, rng),
      absorption_xanes_(n_xanes, cfg.embed_hidden, cfg.embed_dim, cfg.embed_layers, rng),
      energy_exafs_(n_exafs, cfg.embed_hidden, cfg.embed_dim, cfg.embed_layers, rng),
      absorption_exafs_(n_exafs, cfg.embed_hidden, cfg.embed_dim, cfg.embed_layers, rng),
      conv_xanes_(MakeConvStack(cfg, rng)),
      conv_exafs_(MakeConvStack(cfg, rng)),
      head_(2 * ConvFeatures(cfg), cfg.head_hidden, 1, cfg.head_layers, rng) {
  const std::vector<std::vector<double>> zx{std::vector<double>(n_xanes, 0.0)};
  const std::vector<std::vector<double>> ze{std::vector<double>(n_exafs, 0.0)};
  const std::vector<std::vector<double>> z1{std::vector<double>(1, 0.0)};
  inputs_ = {Standardizer::Fit(zx), Standardizer::Fit(zx), Standardizer::Fit(ze),
             Standardizer::Fit(ze)};
  target_ = Standardizer::Fit(z1);
}

Var InverseMnnd::Forward(std::span<const LabeledSample* const> batch, bool training) {
  for (const auto* s : batch) CheckGrid(*s, n_xanes_, n_exafs_);
  const Var e_x = StackRows(batch, inputs_[0], XanesEnergy);
  const Var a_x = StackRows(batch, inputs_[1], XanesMu);
  const Var e_e = StackRows(batch, inputs_[2], ExafsEnergy);
  const Var a_e = StackRows(batch, inputs_[3], ExafsMu);
  const Var feat_x =
      RunConvStack(conv_xanes_, energy_xanes_(e_x), absorption_xanes_(a_x), training);
  const Var feat_e =
      RunConvStack(conv_exafs_, energy_exafs_(e_e), absorption_exafs_(a_e), training);
  return head_(ad::Concat({feat_x, feat_e}, 1));
}

void InverseMnnd::Visit(nn::StateVisitor& v) {
  energy_xanes_.Visit("f_e_xanes", v);
  absorption_xanes_.Visit("f_a_xanes", v);
  energy_exafs_.Visit("f_e_exafs", v);
  absorption_exafs_.Visit("f_a_exafs", v);
  for (std::size_t i = 0; i < conv_xanes_.size(); ++i) {
    conv_xanes_[i].Visit("conv_xanes" + std::to_string(i), v);
  }
  for (std::size_t i = 0; i < conv_exafs_.size(); ++i) {
    conv_exafs_[i].Visit("conv_exafs" + std::to_string(i), v);
  }
  head_.Visit("f_d", v);
}

// ---- InverseNeighbor -----------------------------------------------------------

InverseNeighbor::InverseNeighbor(const TrainConfig& cfg, std::size_t n_xanes,
                                 std::size_t n_exafs, std::vector<Element> classes,
                                 std::optional<Element> element, Rng& rng)
    : cfg_(cfg),
      n_xanes_(n_xanes),
      n_exafs_(n_exafs),
      classes_(std::move(classes)),
      element_(element),
      absorption_xanes_(n_xanes, cfg.embed_hidden, cfg.embed_dim, cfg.embed_layers, rng),
      absorption_exafs_(n_exafs, cfg.embed_hidden, cfg.embed_dim, cfg.embed_layers, rng),
      head_(2 * cfg.embed_dim, cfg.head_hidden, classes_.size(), cfg.head_layers, rng) {
  if (classes_.empty()) throw Error(ErrorCode::kLabel, "no neighbor classes");
  const std::vector<std::vector<double>> zx{std::vector<double>(n_xanes, 0.0)};
  const std::vector<std::vector<double>> ze{std::vector<double>(n_exafs, 0.0)};
  inputs_ = {Standardizer::Fit(zx), Standardizer::Fit(ze)};
}

Var InverseNeighbor::Forward(std::span<const LabeledSample* const> batch) const {
  for (const auto* s : batch) CheckGrid(*s, n_xanes_, n_exafs_);
  const Var a_x = absorption_xanes_(StackRows(batch, inputs_[0], XanesMu));
  const Var a_e = absorption_exafs_(StackRows(batch, inputs_[1], ExafsMu));
  return head_(ad::Concat({a_x, a_e}, 1));
}

void InverseNeighbor::Visit(nn::StateVisitor& v) {
  absorption_xanes_.Visit("f_a_xanes", v);
  absorption_exafs_.Visit("f_a_exafs", v);
  head_.Visit("f_t", v);
}

// ---- CnClassifier --------------------------------------------------------------

CnClassifier::CnClassifier(forest::RandomForest forest, std::vector<int> classes,
                           std::size_t n_xanes, std::size_t n_exafs,
                           std::optional<Element> element)
    : forest_(std::move(forest)),
      classes_(std::move(classes)),
      n_xanes_(n_xanes),
      n_exafs_(n_exafs),
      element_(element) {
  if (forest_.n_classes() != classes_.size()) {
    throw Error(ErrorCode::kLabel, "forest class count does not match CN classes");
  }
  if (forest_.n_features() != n_xanes_ + n_exafs_) {
    throw Error(ErrorCode::kLengthMismatch, "forest feature count does not match grids");
  }
}

// ---- model-level helpers -------------------------------------------------------

Task TaskOf(const Model& model) {
  switch (model.index()) {
    case 0: return Task::kForward;
    case 1: return Task::kMnnd;
    case 2: return Task::kNeighbor;
    default: return Task::kCn;
  }
}

std::string ScopeKey(const Model& model) {
  if (const auto* f = std::get_if<ForwardModel>(&model)) return f->scope_key();
  std::optional<Element> e;
  if (const auto* m = std::get_if<InverseMnnd>(&model)) e = m->element();
  if (const auto* m = std::get_if<InverseNeighbor>(&model)) e = m->element();
  if (const auto* m = std::get_if<CnClassifier>(&model)) e = m->element();
  return e ? std::string(e->symbol()) : "unified";
}

std::vector<double> ConcatSpectra(const LabeledSample& sample) {
  std::vector<double> x = sample.xanes.mu();
  x.insert(x.end(), sample.exafs.mu().begin(), sample.exafs.mu().end());
  return x;
}

// ---- prediction ----------------------------------------------------------------

std::vector<double> ForwardPredict(const ForwardModel& model, const StructureGraph& g) {
  ad::NoGradGuard no_grad;
  const StructureGraph* one[] = {&g};
  const Var out = model.Forward(one);
  return model.target_scaler().Invert(out.value().data());
}

double MnndPredict(InverseMnnd& model, const LabeledSample& sample) {
  ad::NoGradGuard no_grad;
  const LabeledSample* one[] = {&sample};
  const Var out = model.Forward(one, false);
  return model.target_scaler().Invert(out.value().data())[0];
}

std::vector<double> NeighborProbabilities(const InverseNeighbor& model,
                                          const LabeledSample& sample) {
  ad::NoGradGuard no_grad;
  const LabeledSample* one[] = {&sample};
  return Softmax(model.Forward(one).value()).ToVector();
}

Element NeighborPredict(const InverseNeighbor& model, const LabeledSample& sample) {
  ad::NoGradGuard no_grad;
  const LabeledSample* one[] = {&sample};
  const Var logits = model.Forward(one);
  return model.classes()[Argmax(logits.value().data())];
}

int CnPredict(const CnClassifier& model, const LabeledSample& sample) {
  CheckGrid(sample, model.n_xanes(), model.n_exafs());
  return model.classes()[static_cast<std::size_t>(
      model.forest().Predict(ConcatSpectra(sample)))];
}

// ---- evaluation ----------------------------------------------------------------

namespace {

struct ForwardEval {
  double mse = 0.0;  // standardized, as trained
  std::vector<double> pred, target;  // flattened, original units
};

ForwardEval EvalForward(const ForwardModel& model,
                        const std::vector<const StructureGraph*>& graphs,
                        const std::vector<const std::vector<double>*>& targets) {
  ad::NoGradGuard no_grad;
  ForwardEval e;
  const std::size_t chunk = 64;
  const std::size_t n = model.grid().size();
  for (std::size_t start = 0; start < graphs.size(); start += chunk) {
    const std::size_t end = std::min(graphs.size(), start + chunk);
    const Var out = model.Forward(std::span(graphs).subspan(start, end - start));
    for (std::size_t b = 0; b < end - start; ++b) {
      const auto row = out.value().data().subspan(b * n, n);
      const auto& target = *targets[start + b];
      const auto scaled_target = model.target_scaler().Apply(target);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = row[i] - scaled_target[i];
        e.mse += d * d;
      }
      const auto pred = model.target_scaler().Invert(row);
      e.pred.insert(e.pred.end(), pred.begin(), pred.end());
      e.target.insert(e.target.end(), target.begin(), target.end());
    }
  }
  e.mse /= static_cast<double>(graphs.size() * n);
  return e;
}

struct MnndEval {
  double loss = 0.0;
  std::vector<double> pred, target;
};

MnndEval EvalMnnd(InverseMnnd& model, const std::vector<const LabeledSample*>& samples) {
  ad::NoGradGuard no_grad;
  MnndEval e;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    const Var out = model.Forward(std::span(samples).subspan(start, end - start), false);
    for (std::size_t b = 0; b < end - start; ++b) {
      const double scaled = out.value()[b];
      const double target = samples[start + b]->labels.mnnd;
      const double d = scaled - model.target_scaler().Apply(std::vector<double>{target})[0];
      e.loss += d * d;
      e.pred.push_back(model.target_scaler().Invert(std::vector<double>{scaled})[0]);
      e.target.push_back(target);
    }
  }
  e.loss /= static_cast<double>(samples.size());
  return e;
}

int ClassIndex(const std::vector<Element>& classes, Element e) {
  const auto it = std::find(classes.begin(), classes.end(), e);
  return it == classes.end() ? static_cast<int>(classes.size())
                             : static_cast<int>(it - classes.begin());
}

ClassEval EvalNeighbor(const InverseNeighbor& model,
                       const std::vector<const LabeledSample*>& samples) {
  ad::NoGradGuard no_grad;
  ClassEval e;
  const std::size_t m = model.classes().size();
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    const Tensor probs =
        Softmax(model.Forward(std::span(samples).subspan(start, end - start)).value());
    for (std::size_t b = 0; b < end - start; ++b) {
      std::vector<double> p(probs.data().begin() + b * m,
                            probs.data().begin() + (b + 1) * m);
      e.pred.push_back(static_cast<int>(Argmax(p)));
      e.target.push_back(ClassIndex(model.classes(), samples[start + b]->labels.neighbor_type));
      p.push_back(0.0);
      e.probs.push_back(std::move(p));
    }
  }
  return e;
}

ClassEval EvalCn(const CnClassifier& model, const std::vector<const LabeledSample*>& samples) {
  ClassEval e;
  for (const auto* s : samples) {
    CheckGrid(*s, model.n_xanes(), model.n_exafs());
    auto p = model.forest().PredictProba(ConcatSpectra(*s));
    e.pred.push_back(static_cast<int>(Argmax(p)));
    const auto& classes = model.classes();
    const auto it = std::find(classes.begin(), classes.end(), s->labels.cn);
    e.target.push_back(static_cast<int>(it - classes.begin()));
    p.push_back(0.0);
    e.probs.push_back(std::move(p));
  }
  return e;
}

double CrossEntropyMean(const ClassEval& e) {
  return CrossEntropy(e.probs, e.target) / static_cast<double>(e.target.size());
}

}  // namespace

// ---- training ------------------------------------------------------------------

TrainResult TrainForward(const std::vector<LabeledSample>& train,
                         const std::vector<LabeledSample>& val, SpectrumKind kind,
                         const TrainConfig& cfg) {
  cfg.Validate();
  RequireTrainable(train);
  const Spectrum& ref = SpectrumOf(train.front(), kind);
  for (const auto* group : {&train, &val}) {
    for (const auto& s : *group) {
      const Spectrum& sp = SpectrumOf(s, kind);
      if (sp.absorber() != ref.absorber() || sp.edge() != ref.edge()) {
        throw Error(ErrorCode::kScope,
                    "forward models cover one (element, edge, kind); got " +
                        std::string(sp.absorber().symbol()) + "-" + std::string(ToString(sp.edge())) +
                        " alongside " + std::string(ref.absorber().symbol()) + "-" +
                        std::string(ToString(ref.edge())));
      }
      if (sp.size() != ref.size()) {
        throw Error(ErrorCode::kGridMismatch, "forward targets differ in length");
      }
      if (!s.structure) {
        throw Error(ErrorCode::kInsufficientData,
                    "forward training needs structures for every sample");
      }
    }
  }
  auto build = [](const std::vector<LabeledSample>& v) {
    std::vector<StructureGraph> graphs;
    for (const auto& s : v) graphs.push_back(BuildGraph(*s.structure, s.absorber_index));
    return graphs;
  };
  const auto train_graphs = build(train);
  const auto val_graphs = build(val);
  auto pointers = [](const std::vector<StructureGraph>& g) {
    std::vector<const StructureGraph*> out;
    for (const auto& x : g) out.push_back(&x);
    return out;
  };
  const auto train_ptr = pointers(train_graphs);
  const auto val_ptr = pointers(val_graphs);
  auto targets = [kind](const std::vector<LabeledSample>& v) {
    std::vector<const std::vector<double>*> out;
    for (const auto& s : v) out.push_back(&SpectrumOf(s, kind).mu());
    return out;
  };
  const auto train_y = targets(train);
  const auto val_y = targets(val);

  Rng init(cfg.seed);
  ForwardModel model(cfg, ref.absorber(), ref.edge(), kind, ref.grid(), init);
  model.target_scaler() =
      Standardizer::Fit(Rows(train, [kind](const LabeledSample& s) -> const std::vector<double>& {
        return SpectrumOf(s, kind).mu();
      }));
  std::vector<std::vector<double>> scaled_y;
  for (const auto* y : train_y) scaled_y.push_back(model.target_scaler().Apply(*y));
  const std::size_t n = ref.size();

  LoopHooks hooks;
  hooks.batch_loss = [&](std::span<const std::size_t> rows) {
    std::vector<const StructureGraph*> graphs;
    Tensor target({rows.size(), n});
    for (std::size_t b = 0; b < rows.size(); ++b) {
      graphs.push_back(train_ptr[rows[b]]);
      std::copy(scaled_y[rows[b]].begin(), scaled_y[rows[b]].end(),
                target.data().begin() + b * n);
    }
    return ad::MseLoss(model.Forward(graphs), target);
  };
  hooks.validate = [&] {
    const auto e = EvalForward(model, val_ptr, val_y);
    return std::pair{e.mse, MeanAbsoluteError(e.pred, e.target)};
  };
  auto log = Fit(model, train.size(), !val.empty(), cfg, hooks);

  const auto final_eval = val.empty() ? EvalForward(model, train_ptr, train_y)
                                      : EvalForward(model, val_ptr, val_y);
  TrainResult result{std::move(model), EvaluateRegression(final_eval.pred, final_eval.target),
                     train.size(), val.size(), std::move(log)};
  return result;
}

TrainResult TrainMnnd(const std::vector<LabeledSample>& train,
                      const std::vector<LabeledSample>& val, const TrainConfig& cfg) {
  cfg.Validate();
  RequireTrainable(train);
  const std::size_t n_x = train.front().xanes.size(), n_e = train.front().exafs.size();
  for (const auto* group : {&train, &val}) {
    for (const auto& s : *group) CheckGrid(s, n_x, n_e);
  }
  std::optional<Element> element;
  if (cfg.scope.value_or(Scope::kUnified) == Scope::kPerElement) {
    element = CommonAbsorber(train);
    if (!element) throw Error(ErrorCode::kScope, "per-element MNND needs one absorber");
    CheckElementScope(element, val);
  }
  Rng init(cfg.seed);
  InverseMnnd model(cfg, n_x, n_e, element, init);
  model.input_scalers() = {Standardizer::Fit(Rows(train, XanesEnergy)),
                           Standardizer::Fit(Rows(train, XanesMu)),
                           Standardizer::Fit(Rows(train, ExafsEnergy)),
                           Standardizer::Fit(Rows(train, ExafsMu))};
  std::vector<std::vector<double>> y;
  for (const auto& s : train) y.push_back({s.labels.mnnd});
  model.target_scaler() = Standardizer::Fit(y);
  const auto train_ptr = Pointers(train);
  const auto val_ptr = Pointers(val);

  LoopHooks hooks;
  hooks.batch_loss = [&](std::span<const std::size_t> rows) {
    std::vector<const LabeledSample*> batch;
    Tensor target({rows.size(), 1});
    for (std::size_t b = 0; b < rows.size(); ++b) {
      batch.push_back(train_ptr[rows[b]]);
      target[b] = model.target_scaler().Apply(y[rows[b]])[0];
    }
    return ad::MseLoss(model.Forward(batch, true), target);
  };
  hooks.validate = [&] {
    const auto e = EvalMnnd(model, val_ptr);
    return std::pair{e.loss, MeanAbsoluteError(e.pred, e.target)};
  };
  auto log = Fit(model, train.size(), !val.empty(), cfg, hooks);
  const auto e = EvalMnnd(model, val.empty() ? train_ptr : val_ptr);
  return {std::move(model), EvaluateRegression(e.pred, e.target), train.size(), val.size(),
          std::move(log)};
}

TrainResult TrainNeighbor(const std::vector<LabeledSample>& train,
                          const std::vector<LabeledSample>& val, const TrainConfig& cfg) {
  cfg.Validate();
  RequireTrainable(train);
  const std::size_t n_x = train.front().xanes.size(), n_e = train.front().exafs.size();
  for (const auto* group : {&train, &val}) {
    for (const auto& s : *group) CheckGrid(s, n_x, n_e);
  }
  std::optional<Element> element;
  if (cfg.scope.value_or(Scope::kPerElement) == Scope::kPerElement) {
    element = CommonAbsorber(train);
    if (!element) throw Error(ErrorCode::kScope, "per-element model needs one absorber");
    CheckElementScope(element, val);
  }
  std::vector<Element> classes;
  for (const auto& s : train) classes.push_back(s.labels.neighbor_type);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  Rng init(cfg.seed);
  InverseNeighbor model(cfg, n_x, n_e, classes, element, init);
  model.input_scalers() = {Standardizer::Fit(Rows(train, XanesMu)),
                           Standardizer::Fit(Rows(train, ExafsMu))};
  std::vector<int> labels;
  for (const auto& s : train) labels.push_back(ClassIndex(classes, s.labels.neighbor_type));
  const auto train_ptr = Pointers(train);
  const auto val_ptr = Pointers(val);

  LoopHooks hooks;
  hooks.higher_metric_is_better = true;
  hooks.batch_loss = [&](std::span<const std::size_t> rows) {
    std::vector<const LabeledSample*> batch;
    std::vector<int> y;
    for (std::size_t r : rows) {
      batch.push_back(train_ptr[r]);
      y.push_back(labels[r]);
    }
    return ad::CrossEntropyLoss(model.Forward(batch), y);
  };
  hooks.validate = [&] {
    const auto e = EvalNeighbor(model, val_ptr);
    return std::pair{CrossEntropyMean(e), Accuracy(e.pred, e.target)};
  };
  auto log = Fit(model, train.size(), !val.empty(), cfg, hooks);
  auto metrics = ClassMetrics(EvalNeighbor(model, val.empty() ? train_ptr : val_ptr));
  return {std::move(model), metrics, train.size(), val.size(), std::move(log)};
}

TrainResult TrainCn(const std::vector<LabeledSample>& train,
                    const std::vector<LabeledSample>& val, const TrainConfig& cfg) {
  cfg.Validate();
  RequireTrainable(train);
  const std::size_t n_x = train.front().xanes.size(), n_e = train.front().exafs.size();
  for (const auto* group : {&train, &val}) {
    for (const auto& s : *group) CheckGrid(s, n_x, n_e);
  }
  std::optional<Element> element;
  if (cfg.scope.value_or(Scope::kPerElement) == Scope::kPerElement) {
    element = CommonAbsorber(train);
    if (!element) throw Error(ErrorCode::kScope, "per-element model needs one absorber");
    CheckElementScope(element, val);
  }
  std::vector<int> classes;
  for (const auto& s : train) classes.push_back(s.labels.cn);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  forest::FeatureMatrix x(0, n_x + n_e);
  std::vector<int> y;
  for (const auto& s : train) {
    x.AppendRow(ConcatSpectra(s));
    y.push_back(static_cast<int>(std::lower_bound(classes.begin(), classes.end(), s.labels.cn) -
                                 classes.begin()));
  }
  forest::ForestConfig fc = cfg.forest;
  fc.seed = cfg.seed;
  CnClassifier model(forest::RandomForest::Fit(x, y, classes.size(), fc), classes, n_x,
                     n_e, element);
  auto metrics = ClassMetrics(EvalCn(model, Pointers(val.empty() ? train : val)));
  return {std::move(model), metrics, train.size(), val.size(), {}};
}

std::vector<TrainResult> Train(Task task, const std::vector<LabeledSample>& dataset,
                               const TrainConfig& cfg) {
  cfg.Validate();
  if (dataset.empty()) throw Error(ErrorCode::kInsufficientData, "empty dataset");
  const Scope scope = cfg.scope.value_or(DefaultScope(task));
  if (task == Task::kForward && scope == Scope::kUnified) {
    throw Error(ErrorCode::kScope, "forward models are trained per (element, edge, kind)");
  }
  TrainConfig scoped = cfg;
  scoped.scope = scope;

  // Group indices by scope key; std::map keeps the output order stable.
  struct Group {
    std::vector<std::size_t> rows;
    SpectrumKind kind = SpectrumKind::kXanes;
  };
  std::map<std::string, Group> groups;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset[i];
    if (task == Task::kForward) {
      for (SpectrumKind kind : {SpectrumKind::kXanes, SpectrumKind::kExafs}) {
        const Spectrum& sp = SpectrumOf(s, kind);
        const std::string key = std::string(sp.absorber().symbol()) + "-" +
                                std::string(ToString(sp.edge())) + "-" +
                                std::string(ToString(kind));
        auto& g = groups[key];
        g.kind = kind;
        g.rows.push_back(i);
      }
    } else {
      groups[scope == Scope::kUnified ? "unified" : std::string(s.xanes.absorber().symbol())].rows.push_back(i);
    }
  }

  std::vector<TrainResult> results;
  for (const auto& [key, group] : groups) {
    const auto [train_idx, val_idx] = SplitIndices(group.rows.size(), cfg.seed);
    std::vector<LabeledSample> train, val;
    for (std::size_t i : train_idx) train.push_back(dataset[group.rows[i]]);
    for (std::size_t i : val_idx) val.push_back(dataset[group.rows[i]]);
    switch (task) {
      case Task::kForward:
        results.push_back(TrainForward(train, val, group.kind, scoped));
        break;
      case Task::kMnnd:
        results.push_back(TrainMnnd(train, val, scoped));
        break;
      case Task::kNeighbor:
        results.push_back(TrainNeighbor(train, val, scoped));
        break;
      case Task::kCn:
        results.push_back(TrainCn(train, val, scoped));
        break;
    }
  }
  return results;
}

std::vector<LabeledSample> FilterToScope(const Model& model,
                                         const std::vector<LabeledSample>& dataset) {
  std::vector<LabeledSample> out;
  for (const auto& s : dataset) {
    bool keep = true;
    if (const auto* f = std::get_if<ForwardModel>(&model)) {
      const Spectrum& sp = SpectrumOf(s, f->kind());
      keep = sp.absorber() == f->element() && sp.edge() == f->edge();
    } else {
      const std::string key = ScopeKey(model);
      keep = key == "unified" || key == s.xanes.absorber().symbol();
    }
    if (keep) out.push_back(s);
  }
  return out;
}

Metrics Evaluate(Model& model, const std::vector<LabeledSample>& dataset) {
  const auto samples = FilterToScope(model, dataset);
  if (samples.empty()) {
    throw Error(ErrorCode::kInsufficientData,
                "no samples in scope " + ScopeKey(model) + " for task " +
                    std::string(ToString(TaskOf(model))));
  }
  const auto ptrs = Pointers(samples);
  return std::visit(
      [&](auto& m) -> Metrics {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, ForwardModel>) {
          std::vector<StructureGraph> graphs;
          std::vector<const std::vector<double>*> targets;
          for (const auto& s : samples) {
            if (!s.structure) {
              throw Error(ErrorCode::kInsufficientData, "forward evaluation needs structures");
            }
            graphs.push_back(BuildGraph(*s.structure, s.absorber_index));
            const Spectrum& sp = SpectrumOf(s, m.kind());
            if (sp.size() != m.grid().size()) {
              throw Error(ErrorCode::kGridMismatch, "spectrum length differs from model grid");
            }
            targets.push_back(&sp.mu());
          }
          std::vector<const StructureGraph*> gp;
          for (const auto& g : graphs) gp.push_back(&g);
          const auto e = EvalForward(m, gp, targets);
          return EvaluateRegression(e.pred, e.target);
        } else if constexpr (std::is_same_v<M, InverseMnnd>) {
          const auto e = EvalMnnd(m, ptrs);
          return EvaluateRegression(e.pred, e.target);
        } else if constexpr (std::is_same_v<M, InverseNeighbor>) {
          return ClassMetrics(EvalNeighbor(m, ptrs));
        } else {
          return ClassMetrics(EvalCn(m, ptrs));
        }
      },
      model);
}

std::string EpochLogCsv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,val_loss,val_metric\n";
  auto num = [](double v) { return std::isnan(v) ? std::string() : io::FormatDouble(v); };
  for (const auto& e : log) {
    out += std::to_string(e.epoch) + "," + num(e.train_loss) + "," + num(e.val_loss) + "," +
           num(e.val_metric) + "\n";
  }
  return out;
}

nlohmann::json MetricsReport(Task task, const std::string& scope, const Metrics& m,
                             std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
  nlohmann::json j = MetricsJson(m);
  j["task"] = ToString(task);
  j["scope"] = scope;
  j["n_train"] = n_train;
  j["n_val"] = n_val;
  j["seed"] = seed;
  return j;
}

// ---- checkpoints ---------------------------------------------------------------

nlohmann::json SaveModel(Model& model) {
  nlohmann::json j;
  j["format"] = "xastruct-checkpoint";
  j["version"] = kCheckpointVersion;
  j["task"] = ToString(TaskOf(model));
  j["scope"] = ScopeKey(model);
  std::visit(
      [&](auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, CnClassifier>) {
          j["element"] = OptionalElement(m.element());
          j["n_xanes"] = m.n_xanes();
          j["n_exafs"] = m.n_exafs();
          j["classes"] = m.classes();
          j["forest"] = m.forest().ToJson();
        } else {
          j["config"] = ConfigJson(m.config());
          if constexpr (std::is_same_v<M, ForwardModel>) {
            j["element"] = m.element().symbol();
            j["edge"] = ToString(m.edge());
            j["kind"] = ToString(m.kind());
            j["grid"] = m.grid().values();
            j["scalers"] = {{"target", m.target_scaler().ToJson()}};
          } else if constexpr (std::is_same_v<M, InverseMnnd>) {
            j["element"] = OptionalElement(m.element());
            j["n_xanes"] = m.n_xanes();
            j["n_exafs"] = m.n_exafs();
            auto& in = m.input_scalers();
            j["scalers"] = {{"xanes_energy", in[0].ToJson()},
                            {"xanes_mu", in[1].ToJson()},
                            {"exafs_energy", in[2].ToJson()},
                            {"exafs_mu", in[3].ToJson()},
                            {"target", m.target_scaler().ToJson()}};
          } else {
            j["element"] = OptionalElement(m.element());
            j["n_xanes"] = m.n_xanes();
            j["n_exafs"] = m.n_exafs();
            std::vector<std::string> classes;
            for (const auto& c : m.classes()) classes.emplace_back(c.symbol());
            j["classes"] = classes;
            auto& in = m.input_scalers();
            j["scalers"] = {{"xanes_mu", in[0].ToJson()}, {"exafs_mu", in[1].ToJson()}};
          }
          JsonWriter writer;
          m.Visit(writer);
          j["params"] = std::move(writer.params);
          j["buffers"] = std::move(writer.buffers);
        }
      },
      model);
  return j;
}

Model LoadModel(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "xastruct-checkpoint") {
      throw Error(ErrorCode::kParse, "not an xastruct checkpoint");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::kParse, "unsupported checkpoint version");
    }
    const Task task = ParseTask(j.at("task").get<std::string>());
    if (task == Task::kCn) {
      return CnClassifier(forest::RandomForest::FromJson(j.at("forest")),
                          j.at("classes").get<std::vector<int>>(),
                          j.at("n_xanes").get<std::size_t>(),
                          j.at("n_exafs").get<std::size_t>(),
                          OptionalElementFromJson(j.at("element")));
    }
    const TrainConfig cfg = ConfigFromJson(j.at("config"));
    Rng rng(0);
    JsonReader reader(j.at("params"), j.at("buffers"));
    const auto& scalers = j.at("scalers");
    if (task == Task::kForward) {
      ForwardModel m(cfg, Element::FromSymbol(j.at("element").get<std::string>()),
                     ParseEdge(j.at("edge").get<std::string>()),
                     ParseSpectrumKind(j.at("kind").get<std::string>()),
                     EnergyGrid(j.at("grid").get<std::vector<double>>()), rng);
      m.target_scaler() = Standardizer::FromJson(scalers.at("target"));
      m.Visit(reader);
      return m;
    }
    const auto n_x = j.at("n_xanes").get<std::size_t>();
    const auto n_e = j.at("n_exafs").get<std::size_t>();
    const auto element = OptionalElementFromJson(j.at("element"));
    if (task == Task::kMnnd) {
      InverseMnnd m(cfg, n_x, n_e, element, rng);
      m.input_scalers() = {Standardizer::FromJson(scalers.at("xanes_energy")),
                           Standardizer::FromJson(scalers.at("xanes_mu")),
                           Standardizer::FromJson(scalers.at("exafs_energy")),
                           Standardizer::FromJson(scalers.at("exafs_mu"))};
      m.target_scaler() = Standardizer::FromJson(scalers.at("target"));
      m.Visit(reader);
      return m;
    }
    std::vector<Element> classes;
    for (const auto& c : j.at("classes")) classes.push_back(Element::FromSymbol(c.get<std::string>()));
    InverseNeighbor m(cfg, n_x, n_e, std::move(classes), element, rng);
    m.input_scalers() = {Standardizer::FromJson(scalers.at("xanes_mu")),
                         Standardizer::FromJson(scalers.at("exafs_mu"))};
    m.Visit(reader);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("checkpoint: ") + e.what());
  }
}

void WriteCheckpoint(const std::filesystem::path& path, Model& model) {
  io::WriteText(path, SaveModel(model).dump() + "\n");
}

Model ReadCheckpoint(const std::filesystem::path& path) {
  const std::string text = io::ReadText(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return LoadModel(j);
}

}  // namespace xastruct::pipelines
