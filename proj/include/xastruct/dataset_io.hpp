#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "xastruct/crystal.hpp"
#include "xastruct/spectra.hpp"

namespace xastruct::io {

namespace fs = std::filesystem;

/// Shortest decimal text that parses back to exactly `v`.
std::string FormatDouble(double v);

// Structures: {"id": str, "lattice": [9 reals, row-major],
//              "sites": [{"element": "Cu", "frac": [x, y, z]}, ...]}
nlohmann::json StructureToJson(const CrystalStructure& s);
CrystalStructure StructureFromJson(const nlohmann::json& j);
void WriteStructure(const fs::path& path, const CrystalStructure& s);
/// A single JSON document, or one structure per line for `.jsonl` files.
std::vector<CrystalStructure> ReadStructures(const fs::path& path);

nlohmann::json LabelsToJson(const DescriptorLabels& labels);
DescriptorLabels LabelsFromJson(const nlohmann::json& j);

/// Writes `energy_ev,mu` CSV plus a sidecar with the same stem and a `.json`
/// extension holding {kind, edge, absorber, structure_id}.
void WriteSpectrum(const fs::path& csv_path, const Spectrum& sp);
Spectrum ReadSpectrum(const fs::path& csv_path);
fs::path SidecarPath(const fs::path& csv_path);

/// One manifest line. Paths are relative to the manifest's directory.
struct ManifestRecord {
  std::string id;
  std::string structure;  // may be empty when no structure is attached
  std::size_t absorber_index = 0;
  std::string xanes;
  std::string exafs;
  DescriptorLabels labels;
};

nlohmann::json RecordToJson(const ManifestRecord& r);
ManifestRecord RecordFromJson(const nlohmann::json& j);
void WriteManifest(const fs::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> ReadManifest(const fs::path& path);

/// Loads every sample listed in a manifest, with structures when present.
std::vector<LabeledSample> LoadDataset(const fs::path& manifest);

/// Writes `text` to `path`, creating parent directories. Throws Error(kIo).
void WriteText(const fs::path& path, const std::string& text);
std::string ReadText(const fs::path& path);

}  // namespace xastruct::io
