#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "xastruct/config.hpp"
#include "xastruct/crystal.hpp"
#include "xastruct/dataset_io.hpp"
#include "xastruct/exafs_oracle.hpp"
#include "xastruct/spectra.hpp"

namespace xastruct::synth {

/// Ideal binary (or elemental) lattices in primitive cells. The absorber
/// occupies site 0; its first-shell coordination is noted per template.
enum class Template {
  kZincBlende,  // CN 4
  kRockSalt,    // CN 6
  kCesiumChloride,  // CN 8
  kFluorite,    // CN 8 (cation absorber)
  kFcc,         // CN 12, single species
};

std::string_view ToString(Template t);
Template ParseTemplate(std::string_view text);
int IdealCoordination(Template t);

/// Ideal structure with absorber `a`, partner `b`, and nearest-neighbor
/// bond length `bond` in angstroms.
CrystalStructure MakeTemplate(Template t, Element a, Element b, double bond,
                              std::string id);

struct SynthConfig {
  std::size_t n_samples = 100;
  std::uint64_t seed = 7;
  std::vector<Element> absorbers;
  std::vector<Element> scatterers;
  std::vector<Template> templates = {Template::kZincBlende, Template::kRockSalt,
                                     Template::kCesiumChloride,
                                     Template::kFluorite, Template::kFcc};
  double bond_min = 1.9;   // angstrom, before strain
  double bond_max = 3.05;
  double strain = 0.05;    // isotropic, +-fraction
  double jitter = 0.05;    // angstrom, max displacement per site
  std::size_t grid_points = kDefaultGridLength;
  OracleParams oracle;

  /// Keys: n_samples, seed, elements, absorbers, scatterers (comma-separated
  /// symbols), templates, bond_min, bond_max, strain, jitter, grid_points,
  /// plus the oracle keys.
  static SynthConfig FromConfig(const KeyValueConfig& cfg);
};

/// One generated sample with the structure it came from.
struct SynthSample {
  std::string id;
  CrystalStructure structure;
  std::size_t absorber_index;
  LabeledSample sample;
};

/// Deterministic for a given config: sample i depends only on (seed, i).
std::vector<SynthSample> Generate(const SynthConfig& cfg);

/// Writes structures/, spectra/ and manifest.jsonl under `out_dir`; returns
/// the manifest path.
std::filesystem::path WriteDataset(const std::vector<SynthSample>& samples,
                                   const std::filesystem::path& out_dir);

std::vector<LabeledSample> ToLabeledSamples(std::vector<SynthSample> samples);

}  // namespace xastruct::synth
