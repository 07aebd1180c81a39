#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "xastruct/config.hpp"
#include "xastruct/forest.hpp"
#include "xastruct/metrics.hpp"
#include "xastruct/nn.hpp"
#include "xastruct/spectra.hpp"

namespace xastruct::pipelines {

enum class Task { kForward, kMnnd, kCn, kNeighbor };
std::string_view ToString(Task task);
/// Throws Error(kUsage) for unknown names.
Task ParseTask(std::string_view text);

enum class Scope { kPerElement, kUnified };
std::string_view ToString(Scope scope);
Scope ParseScope(std::string_view text);

/// Default scope per task: forward, cn and neighbor are per element, mnnd is
/// unified.
Scope DefaultScope(Task task);

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  int epochs = 100;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  int patience = 20;  // epochs without validation improvement
  std::optional<Scope> scope;  // unset: DefaultScope(task)

  nn::EncoderConfig encoder;
  std::size_t head_hidden = 128;
  int head_layers = 3;
  std::size_t embed_dim = 64;
  std::size_t embed_hidden = 64;
  int embed_layers = 2;
  int conv_blocks = 2;
  std::size_t conv_channels = 8;
  std::size_t conv_kernel = 5;
  forest::ForestConfig forest;

  /// Throws Error(kParse) when lr <= 0, weight_decay < 0 or sizes are zero.
  void Validate() const;

  /// Keys: lr, weight_decay, epochs, batch_size, seed, patience, scope,
  /// encoder_dim, encoder_rounds, encoder_rbf, encoder_hidden, encoder_layers,
  /// head_hidden, head_layers, embed_dim, embed_hidden, embed_layers,
  /// conv_blocks, conv_channels, conv_kernel, forest_trees, forest_depth,
  /// forest_min_leaf, forest_features.
  static TrainConfig FromConfig(const KeyValueConfig& cfg);
};

/// Per-position standardization: (x - mean) / scale, scale = std or 1 when
/// the column is constant.
class Standardizer {
 public:
  Standardizer() = default;
  static Standardizer Fit(std::span<const std::vector<double>> rows);

  std::vector<double> Apply(std::span<const double> row) const;
  std::vector<double> Invert(std::span<const double> row) const;
  std::size_t size() const { return mean_.size(); }

  nlohmann::json ToJson() const;
  static Standardizer FromJson(const nlohmann::json& j);

 private:
  std::vector<double> mean_;
  std::vector<double> scale_;
};

/// Graph encoder plus an SGMLP head onto the n grid points of one
/// (element, edge, kind) combination.
class ForwardModel {
 public:
  ForwardModel(const TrainConfig& cfg, Element element, Edge edge,
               SpectrumKind kind, EnergyGrid grid, Rng& rng);

  /// Standardized outputs [B, n] for a batch of graphs.
  ad::Var Forward(std::span<const StructureGraph* const> graphs) const;

  Element element() const { return element_; }
  Edge edge() const { return edge_; }
  SpectrumKind kind() const { return kind_; }
  const EnergyGrid& grid() const { return grid_; }
  Standardizer& target_scaler() { return target_scaler_; }
  const Standardizer& target_scaler() const { return target_scaler_; }
  const TrainConfig& config() const { return cfg_; }
  std::string scope_key() const;

  void Visit(nn::StateVisitor& v);

 private:
  TrainConfig cfg_;
  Element element_;
  Edge edge_;
  SpectrumKind kind_;
  EnergyGrid grid_;
  nn::MPEncoder encoder_;
  nn::SGMLP head_;
  Standardizer target_scaler_;
};

/// Embedding SGMLPs for energy and absorption of both spectrum kinds,
/// a ConvBlock stack per kind over [z_e | z_a], and an SGMLP regressor.
class InverseMnnd {
 public:
  InverseMnnd(const TrainConfig& cfg, std::size_t n_xanes, std::size_t n_exafs,
              std::optional<Element> element, Rng& rng);

  /// Standardized predictions [B, 1].
  ad::Var Forward(std::span<const LabeledSample* const> batch, bool training);

  std::size_t n_xanes() const { return n_xanes_; }
  std::size_t n_exafs() const { return n_exafs_; }
  std::optional<Element> element() const { return element_; }
  const TrainConfig& config() const { return cfg_; }

  /// Input scalers: xanes energy, xanes mu, exafs energy, exafs mu.
  std::array<Standardizer, 4>& input_scalers() { return inputs_; }
  Standardizer& target_scaler() { return target_; }
  const Standardizer& target_scaler() const { return target_; }

  void Visit(nn::StateVisitor& v);

 private:
  TrainConfig cfg_;
  std::size_t n_xanes_, n_exafs_;
  std::optional<Element> element_;
  nn::SGMLP energy_xanes_, absorption_xanes_, energy_exafs_, absorption_exafs_;
  std::vector<nn::ConvBlock> conv_xanes_, conv_exafs_;
  nn::SGMLP head_;
  std::array<Standardizer, 4> inputs_;
  Standardizer target_;
};

/// Absorption embeddings of both kinds feed an SGMLP classifier over the
/// neighbor elements seen in training.
class InverseNeighbor {
 public:
  InverseNeighbor(const TrainConfig& cfg, std::size_t n_xanes,
                  std::size_t n_exafs, std::vector<Element> classes,
                  std::optional<Element> element, Rng& rng);

  /// Logits [B, m].
  ad::Var Forward(std::span<const LabeledSample* const> batch) const;

  const std::vector<Element>& classes() const { return classes_; }
  std::optional<Element> element() const { return element_; }
  std::size_t n_xanes() const { return n_xanes_; }
  std::size_t n_exafs() const { return n_exafs_; }
  const TrainConfig& config() const { return cfg_; }
  std::array<Standardizer, 2>& input_scalers() { return inputs_; }

  void Visit(nn::StateVisitor& v);

 private:
  TrainConfig cfg_;
  std::size_t n_xanes_, n_exafs_;
  std::vector<Element> classes_;
  std::optional<Element> element_;
  nn::SGMLP absorption_xanes_, absorption_exafs_;
  nn::SGMLP head_;
  std::array<Standardizer, 2> inputs_;
};

/// Random forest over the raw concatenated spectra.
class CnClassifier {
 public:
  CnClassifier(forest::RandomForest forest, std::vector<int> classes,
               std::size_t n_xanes, std::size_t n_exafs,
               std::optional<Element> element);

  const forest::RandomForest& forest() const { return forest_; }
  const std::vector<int>& classes() const { return classes_; }
  std::optional<Element> element() const { return element_; }
  std::size_t n_xanes() const { return n_xanes_; }
  std::size_t n_exafs() const { return n_exafs_; }

 private:
  forest::RandomForest forest_;
  std::vector<int> classes_;
  std::size_t n_xanes_, n_exafs_;
  std::optional<Element> element_;
};

using Model = std::variant<ForwardModel, InverseMnnd, InverseNeighbor, CnClassifier>;

Task TaskOf(const Model& model);
/// "unified", an element symbol, or "Cu-K-xanes" style triples for forward.
std::string ScopeKey(const Model& model);

/// Raw features [x_xanes | x_exafs] of one sample.
std::vector<double> ConcatSpectra(const LabeledSample& sample);

// ---- prediction -----------------------------------------------------------

/// Predicted mu on the model grid. Throws Error(kEmptyEnvironment) when the
/// graph mask is all zero.
std::vector<double> ForwardPredict(const ForwardModel& model,
                                   const StructureGraph& g);
/// Throws Error(kGridMismatch) when the spectra lengths differ from training.
double MnndPredict(InverseMnnd& model, const LabeledSample& sample);
Element NeighborPredict(const InverseNeighbor& model, const LabeledSample& sample);
std::vector<double> NeighborProbabilities(const InverseNeighbor& model,
                                          const LabeledSample& sample);
int CnPredict(const CnClassifier& model, const LabeledSample& sample);

// ---- training -------------------------------------------------------------

struct EpochLog {
  int epoch;
  double train_loss;
  double val_loss;  // NaN without validation data
  double val_metric;  // MAE for regression, accuracy for classification
};

struct TrainResult {
  Model model;
  Metrics metrics;  // on the validation split, or training data when empty
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::vector<EpochLog> log;
};

/// Explicit-split entry points. An empty `val` disables early stopping.
TrainResult TrainForward(const std::vector<LabeledSample>& train,
                         const std::vector<LabeledSample>& val,
                         SpectrumKind kind, const TrainConfig& cfg);
TrainResult TrainMnnd(const std::vector<LabeledSample>& train,
                      const std::vector<LabeledSample>& val,
                      const TrainConfig& cfg);
TrainResult TrainNeighbor(const std::vector<LabeledSample>& train,
                          const std::vector<LabeledSample>& val,
                          const TrainConfig& cfg);
TrainResult TrainCn(const std::vector<LabeledSample>& train,
                    const std::vector<LabeledSample>& val,
                    const TrainConfig& cfg);

/// Splits 8:2 with the config seed and trains one model per scope group
/// (per element, per (element, edge, kind) for forward, or one unified
/// model). Results are ordered by scope key.
std::vector<TrainResult> Train(Task task, const std::vector<LabeledSample>& dataset,
                               const TrainConfig& cfg);

/// Samples of `dataset` that fall inside the model's scope.
std::vector<LabeledSample> FilterToScope(const Model& model,
                                         const std::vector<LabeledSample>& dataset);

/// Metrics of the model on samples inside its scope. Throws
/// Error(kInsufficientData) when none are.
Metrics Evaluate(Model& model, const std::vector<LabeledSample>& dataset);

/// Training-log CSV: epoch,train_loss,val_loss,val_metric
std::string EpochLogCsv(const std::vector<EpochLog>& log);

/// {task, scope, mae, r2, accuracy, macro_f1, cross_entropy, n_train, n_val, seed}
nlohmann::json MetricsReport(Task task, const std::string& scope,
                             const Metrics& m, std::size_t n_train,
                             std::size_t n_val, std::uint64_t seed);

// ---- checkpoints ----------------------------------------------------------

nlohmann::json SaveModel(Model& model);
/// Throws Error(kParse) on malformed documents.
Model LoadModel(const nlohmann::json& j);
void WriteCheckpoint(const std::filesystem::path& path, Model& model);
Model ReadCheckpoint(const std::filesystem::path& path);

}  // namespace xastruct::pipelines
