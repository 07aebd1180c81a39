#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xastruct/crystal.hpp"
#include "xastruct/element.hpp"

namespace xastruct {

/// Default number of energy points for both XANES and EXAFS inputs.
inline constexpr std::size_t kDefaultGridLength = 100;

/// Strictly increasing energy axis in eV, at least two points.
class EnergyGrid {
 public:
  explicit EnergyGrid(std::vector<double> values);

  static EnergyGrid Linspace(double lo, double hi, std::size_t n);

  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double front() const noexcept { return values_.front(); }
  double back() const noexcept { return values_.back(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  friend bool operator==(const EnergyGrid&, const EnergyGrid&) = default;

 private:
  std::vector<double> values_;
};

enum class SpectrumKind { kXanes, kExafs };
enum class Edge { kK, kL };

std::string_view ToString(SpectrumKind kind);
std::string_view ToString(Edge edge);
SpectrumKind ParseSpectrumKind(std::string_view text);
Edge ParseEdge(std::string_view text);

class Spectrum {
 public:
  /// Throws Error(kLengthMismatch) or Error(kOutOfRange) for non-finite mu.
  Spectrum(EnergyGrid grid, std::vector<double> mu, SpectrumKind kind,
           Edge edge, Element absorber, std::string structure_id);

  const EnergyGrid& grid() const noexcept { return grid_; }
  const std::vector<double>& mu() const noexcept { return mu_; }
  SpectrumKind kind() const noexcept { return kind_; }
  Edge edge() const noexcept { return edge_; }
  Element absorber() const noexcept { return absorber_; }
  const std::string& structure_id() const noexcept { return structure_id_; }
  std::size_t size() const noexcept { return mu_.size(); }

  Spectrum WithMu(std::vector<double> mu) const;

 private:
  EnergyGrid grid_;
  std::vector<double> mu_;
  SpectrumKind kind_;
  Edge edge_;
  Element absorber_;
  std::string structure_id_;
};

/// Paired XANES/EXAFS of one absorber plus its structural labels. The source
/// structure is kept when known so forward models can be trained on it.
struct LabeledSample {
  Spectrum xanes;
  Spectrum exafs;
  DescriptorLabels labels;
  std::optional<CrystalStructure> structure;
  std::size_t absorber_index = 0;
};

/// Checks kind tags and that both spectra share absorber and structure id.
void ValidateSample(const LabeledSample& sample);

/// Linear interpolation of `sp` onto `target`. Throws Error(kOutOfRange) if
/// the target extends past the source range.
Spectrum Resample(const Spectrum& sp, const EnergyGrid& target);

/// (mu - pre) / jump using the mean of the first and last 10% of points.
/// Throws Error(kFlatSpectrum) when the jump is <= 1e-9.
Spectrum NormalizeEdgeJump(const Spectrum& sp);

struct DatasetSplit {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> val;
};

/// Seeded shuffle, then floor(0.8 n) train and the remainder validation.
/// Throws Error(kInsufficientData) for fewer than 5 samples.
DatasetSplit SplitDataset(std::vector<LabeledSample> samples,
                          std::uint64_t seed);

/// Index form of the split, for callers that keep samples elsewhere.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> SplitIndices(
    std::size_t n, std::uint64_t seed);

}  // namespace xastruct
