#include "xastruct/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xastruct/error.hpp"
#include "xastruct/random.hpp"

namespace xastruct {

EnergyGrid::EnergyGrid(std::vector<double> values) : values_(std::move(values)) {
  if (values_.size() < 2) {
    throw Error(ErrorCode::kOutOfRange, "energy grid needs at least 2 points");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i]) || (i > 0 && !(values_[i] > values_[i - 1]))) {
      throw Error(ErrorCode::kOutOfRange,
                  "energy grid must be finite and strictly increasing at index " +
                      std::to_string(i));
    }
  }
}

EnergyGrid EnergyGrid::Linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = n == 1 ? lo
                  : lo + (hi - lo) * static_cast<double>(i) /
                             static_cast<double>(n - 1);
  }
  if (n >= 2) v.back() = hi;
  return EnergyGrid(std::move(v));
}

std::string_view ToString(SpectrumKind kind) {
  return kind == SpectrumKind::kXanes ? "XANES" : "EXAFS";
}

std::string_view ToString(Edge edge) { return edge == Edge::kK ? "K" : "L"; }

SpectrumKind ParseSpectrumKind(std::string_view text) {
  if (text == "XANES" || text == "xanes") return SpectrumKind::kXanes;
  if (text == "EXAFS" || text == "exafs") return SpectrumKind::kExafs;
  throw Error(ErrorCode::kParse, "unknown spectrum kind '" + std::string(text) + "'");
}

Edge ParseEdge(std::string_view text) {
  if (text == "K" || text == "k") return Edge::kK;
  if (text == "L" || text == "l") return Edge::kL;
  throw Error(ErrorCode::kParse, "unknown edge '" + std::string(text) + "'");
}

Spectrum::Spectrum(EnergyGrid grid, std::vector<double> mu, SpectrumKind kind,
                   Edge edge, Element absorber, std::string structure_id)
    : grid_(std::move(grid)),
      mu_(std::move(mu)),
      kind_(kind),
      edge_(edge),
      absorber_(absorber),
      structure_id_(std::move(structure_id)) {
  if (mu_.size() != grid_.size()) {
    throw Error(ErrorCode::kLengthMismatch,
                "mu has " + std::to_string(mu_.size()) + " values, grid has " +
                    std::to_string(grid_.size()));
  }
  for (double v : mu_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kOutOfRange, "non-finite mu");
  }
}

Spectrum Spectrum::WithMu(std::vector<double> mu) const {
  return Spectrum(grid_, std::move(mu), kind_, edge_, absorber_, structure_id_);
}

void ValidateSample(const LabeledSample& sample) {
  if (sample.xanes.kind() != SpectrumKind::kXanes ||
      sample.exafs.kind() != SpectrumKind::kExafs) {
    throw Error(ErrorCode::kParse, "sample spectra carry the wrong kind tags");
  }
  if (sample.xanes.absorber() != sample.exafs.absorber() ||
      sample.xanes.structure_id() != sample.exafs.structure_id()) {
    throw Error(ErrorCode::kParse,
                "XANES and EXAFS disagree on absorber or structure id");
  }
}

Spectrum Resample(const Spectrum& sp, const EnergyGrid& target) {
  const auto& src = sp.grid().values();
  const auto& mu = sp.mu();
  if (target.front() < src.front() || target.back() > src.back()) {
    throw Error(ErrorCode::kOutOfRange,
                "target grid [" + std::to_string(target.front()) + ", " +
                    std::to_string(target.back()) + "] exceeds source [" +
                    std::to_string(src.front()) + ", " +
                    std::to_string(src.back()) + "]");
  }
  std::vector<double> out(target.size());
  std::size_t seg = 0;
  for (std::size_t t = 0; t < target.size(); ++t) {
    const double e = target[t];
    while (seg + 2 < src.size() && src[seg + 1] < e) ++seg;
    const double e0 = src[seg];
    const double e1 = src[seg + 1];
    if (e == e0) {
      out[t] = mu[seg];
    } else if (e == e1) {
      out[t] = mu[seg + 1];
    } else {
      const double w = (e - e0) / (e1 - e0);
      out[t] = mu[seg] + w * (mu[seg + 1] - mu[seg]);
    }
  }
  return Spectrum(target, std::move(out), sp.kind(), sp.edge(), sp.absorber(),
                  sp.structure_id());
}

Spectrum NormalizeEdgeJump(const Spectrum& sp) {
  const auto& mu = sp.mu();
  const std::size_t n = mu.size();
  const std::size_t w = std::max<std::size_t>(1, n / 10);
  const double pre =
      std::accumulate(mu.begin(), mu.begin() + w, 0.0) / static_cast<double>(w);
  const double post =
      std::accumulate(mu.end() - w, mu.end(), 0.0) / static_cast<double>(w);
  const double jump = post - pre;
  if (!(jump > 1e-9)) {
    throw Error(ErrorCode::kFlatSpectrum,
                "edge jump " + std::to_string(jump) + " is not positive");
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (mu[i] - pre) / jump;
  return sp.WithMu(std::move(out));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> SplitIndices(
    std::size_t n, std::uint64_t seed) {
  if (n < 5) {
    throw Error(ErrorCode::kInsufficientData,
                "need at least 5 samples to split, got " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.Shuffle(std::span<std::size_t>(order));
  const std::size_t n_train = n * 8 / 10;
  std::vector<std::size_t> train(order.begin(), order.begin() + n_train);
  std::vector<std::size_t> val(order.begin() + n_train, order.end());
  return {std::move(train), std::move(val)};
}

DatasetSplit SplitDataset(std::vector<LabeledSample> samples,
                          std::uint64_t seed) {
  auto [train_idx, val_idx] = SplitIndices(samples.size(), seed);
  DatasetSplit split;
  split.train.reserve(train_idx.size());
  split.val.reserve(val_idx.size());
  for (std::size_t i : train_idx) split.train.push_back(std::move(samples[i]));
  for (std::size_t i : val_idx) split.val.push_back(std::move(samples[i]));
  return split;
}

}  // namespace xastruct
