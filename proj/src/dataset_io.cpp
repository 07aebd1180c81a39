#include "xastruct/dataset_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "xastruct/error.hpp"

namespace xastruct::io {
namespace {

template <typename F>
auto WithJsonErrors(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, what + ": " + e.what());
  }
}

std::vector<std::string> SplitLines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::string FormatDouble(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error(ErrorCode::kIo, "cannot format number");
  return std::string(buf, ptr);
}

void WriteText(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) {
      throw Error(ErrorCode::kIo, "cannot create directory " +
                                      path.parent_path().string() + ": " +
                                      ec.message());
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

nlohmann::json StructureToJson(const CrystalStructure& s) {
  std::vector<double> lattice;
  for (const auto& row : s.lattice().basis())
    lattice.insert(lattice.end(), row.begin(), row.end());
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& site : s.sites()) {
    sites.push_back({{"element", site.element.symbol()},
                     {"frac", {site.frac[0], site.frac[1], site.frac[2]}}});
  }
  return {{"id", s.id()}, {"lattice", lattice}, {"sites", std::move(sites)}};
}

CrystalStructure StructureFromJson(const nlohmann::json& j) {
  return WithJsonErrors("structure", [&] {
    const auto lattice = j.at("lattice").get<std::vector<double>>();
    std::vector<Site> sites;
    for (const auto& js : j.at("sites")) {
      const auto frac = js.at("frac").get<std::vector<double>>();
      if (frac.size() != 3) throw Error(ErrorCode::kParse, "frac needs 3 values");
      sites.push_back({Element::FromSymbol(js.at("element").get<std::string>()),
                       Vec3{frac[0], frac[1], frac[2]}});
    }
    return CrystalStructure(j.at("id").get<std::string>(),
                            Lattice::FromRowMajor(lattice), std::move(sites));
  });
}

void WriteStructure(const fs::path& path, const CrystalStructure& s) {
  WriteText(path, StructureToJson(s).dump(2) + "\n");
}

std::vector<CrystalStructure> ReadStructures(const fs::path& path) {
  const std::string text = ReadText(path);
  std::vector<CrystalStructure> out;
  if (path.extension() == ".jsonl") {
    for (const auto& line : SplitLines(text)) {
      out.push_back(StructureFromJson(
          WithJsonErrors(path.string(), [&] { return nlohmann::json::parse(line); })));
    }
  } else {
    out.push_back(StructureFromJson(
        WithJsonErrors(path.string(), [&] { return nlohmann::json::parse(text); })));
  }
  return out;
}

nlohmann::json LabelsToJson(const DescriptorLabels& labels) {
  return {{"cn", labels.cn},
          {"mnnd", labels.mnnd},
          {"neighbor_type", labels.neighbor_type.symbol()},
          {"shell_distances", labels.shell_distances}};
}

DescriptorLabels LabelsFromJson(const nlohmann::json& j) {
  return WithJsonErrors("labels", [&] {
    DescriptorLabels l;
    l.cn = j.at("cn").get<int>();
    l.mnnd = j.at("mnnd").get<double>();
    l.neighbor_type = Element::FromSymbol(j.at("neighbor_type").get<std::string>());
    l.shell_distances = j.at("shell_distances").get<std::vector<double>>();
    return l;
  });
}

fs::path SidecarPath(const fs::path& csv_path) {
  fs::path p = csv_path;
  p.replace_extension(".json");
  return p;
}

void WriteSpectrum(const fs::path& csv_path, const Spectrum& sp) {
  std::string csv = "energy_ev,mu\n";
  for (std::size_t i = 0; i < sp.size(); ++i) {
    csv += FormatDouble(sp.grid()[i]) + "," + FormatDouble(sp.mu()[i]) + "\n";
  }
  WriteText(csv_path, csv);
  const nlohmann::json meta = {{"kind", ToString(sp.kind())},
                               {"edge", ToString(sp.edge())},
                               {"absorber", sp.absorber().symbol()},
                               {"structure_id", sp.structure_id()}};
  WriteText(SidecarPath(csv_path), meta.dump(2) + "\n");
}

Spectrum ReadSpectrum(const fs::path& csv_path) {
  const auto lines = SplitLines(ReadText(csv_path));
  if (lines.empty() || lines.front() != "energy_ev,mu") {
    throw Error(ErrorCode::kParse, csv_path.string() + ": missing header energy_ev,mu");
  }
  std::vector<double> energy, mu;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto comma = lines[i].find(',');
    if (comma == std::string::npos) {
      throw Error(ErrorCode::kParse, csv_path.string() + ": bad row " + std::to_string(i));
    }
    try {
      energy.push_back(std::stod(lines[i].substr(0, comma)));
      mu.push_back(std::stod(lines[i].substr(comma + 1)));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParse, csv_path.string() + ": bad number in row " +
                                         std::to_string(i));
    }
  }
  const auto meta = WithJsonErrors(csv_path.string(), [&] {
    return nlohmann::json::parse(ReadText(SidecarPath(csv_path)));
  });
  return WithJsonErrors("spectrum sidecar", [&] {
    return Spectrum(EnergyGrid(std::move(energy)), std::move(mu),
                    ParseSpectrumKind(meta.at("kind").get<std::string>()),
                    ParseEdge(meta.at("edge").get<std::string>()),
                    Element::FromSymbol(meta.at("absorber").get<std::string>()),
                    meta.at("structure_id").get<std::string>());
  });
}

nlohmann::json RecordToJson(const ManifestRecord& r) {
  return {{"id", r.id},
          {"structure", r.structure},
          {"absorber_index", r.absorber_index},
          {"xanes", r.xanes},
          {"exafs", r.exafs},
          {"labels", LabelsToJson(r.labels)}};
}

ManifestRecord RecordFromJson(const nlohmann::json& j) {
  return WithJsonErrors("manifest record", [&] {
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.structure = j.value("structure", std::string());
    r.absorber_index = j.value("absorber_index", std::size_t{0});
    r.xanes = j.at("xanes").get<std::string>();
    r.exafs = j.at("exafs").get<std::string>();
    r.labels = LabelsFromJson(j.at("labels"));
    return r;
  });
}

void WriteManifest(const fs::path& path,
                   const std::vector<ManifestRecord>& records) {
  std::string text;
  for (const auto& r : records) text += RecordToJson(r).dump() + "\n";
  WriteText(path, text);
}

std::vector<ManifestRecord> ReadManifest(const fs::path& path) {
  std::vector<ManifestRecord> out;
  for (const auto& line : SplitLines(ReadText(path))) {
    out.push_back(RecordFromJson(
        WithJsonErrors(path.string(), [&] { return nlohmann::json::parse(line); })));
  }
  return out;
}

std::vector<LabeledSample> LoadDataset(const fs::path& manifest) {
  const fs::path base = manifest.parent_path();
  std::vector<LabeledSample> samples;
  for (const auto& r : ReadManifest(manifest)) {
    LabeledSample s{ReadSpectrum(base / r.xanes), ReadSpectrum(base / r.exafs),
                    r.labels, std::nullopt, r.absorber_index};
    if (!r.structure.empty()) {
      auto structures = ReadStructures(base / r.structure);
      s.structure = std::move(structures.front());
    }
    ValidateSample(s);
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace xastruct::io
