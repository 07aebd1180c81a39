#include "xastruct/synth.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "xastruct/error.hpp"
#include "xastruct/random.hpp"

namespace xastruct::synth {
namespace {

Mat3 FccPrimitive(double a) {
  const double h = 0.5 * a;
  return Mat3{Vec3{0, h, h}, Vec3{h, 0, h}, Vec3{h, h, 0}};
}

Mat3 Inverse(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Mat3 inv;
  inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return inv;
}

std::vector<Element> ParseElements(const std::string& text) {
  std::vector<Element> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(Element::FromSymbol(item.substr(b, e - b + 1)));
  }
  return out;
}

std::string SampleId(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "syn-%06zu", i);
  return buf;
}

}  // namespace

std::string_view ToString(Template t) {
  switch (t) {
    case Template::kZincBlende: return "zincblende";
    case Template::kRockSalt: return "rocksalt";
    case Template::kCesiumChloride: return "cscl";
    case Template::kFluorite: return "fluorite";
    case Template::kFcc: return "fcc";
  }
  return "unknown";
}

Template ParseTemplate(std::string_view text) {
  for (Template t : {Template::kZincBlende, Template::kRockSalt,
                     Template::kCesiumChloride, Template::kFluorite,
                     Template::kFcc}) {
    if (ToString(t) == text) return t;
  }
  throw Error(ErrorCode::kParse, "unknown template '" + std::string(text) + "'");
}

int IdealCoordination(Template t) {
  switch (t) {
    case Template::kZincBlende: return 4;
    case Template::kRockSalt: return 6;
    case Template::kCesiumChloride: return 8;
    case Template::kFluorite: return 8;
    case Template::kFcc: return 12;
  }
  return 0;
}

CrystalStructure MakeTemplate(Template t, Element a, Element b, double bond,
                              std::string id) {
  const double sqrt3 = std::sqrt(3.0);
  switch (t) {
    case Template::kZincBlende: {
      const double lat = 4.0 * bond / sqrt3;
      return CrystalStructure(std::move(id), Lattice(FccPrimitive(lat)),
                              {{a, {0, 0, 0}}, {b, {0.25, 0.25, 0.25}}});
    }
    case Template::kRockSalt:
      return CrystalStructure(std::move(id), Lattice(FccPrimitive(2.0 * bond)),
                              {{a, {0, 0, 0}}, {b, {0.5, 0.5, 0.5}}});
    case Template::kCesiumChloride:
      return CrystalStructure(std::move(id), Lattice::Cubic(2.0 * bond / sqrt3),
                              {{a, {0, 0, 0}}, {b, {0.5, 0.5, 0.5}}});
    case Template::kFluorite: {
      const double lat = 4.0 * bond / sqrt3;
      return CrystalStructure(
          std::move(id), Lattice(FccPrimitive(lat)),
          {{a, {0, 0, 0}}, {b, {0.25, 0.25, 0.25}}, {b, {0.75, 0.75, 0.75}}});
    }
    case Template::kFcc:
      return CrystalStructure(std::move(id),
                              Lattice(FccPrimitive(bond * std::sqrt(2.0))),
                              {{a, {0, 0, 0}}});
  }
  throw Error(ErrorCode::kParse, "unknown template");
}

SynthConfig SynthConfig::FromConfig(const KeyValueConfig& cfg) {
  SynthConfig c;
  c.n_samples = static_cast<std::size_t>(cfg.GetInt("n_samples", 100));
  c.seed = static_cast<std::uint64_t>(cfg.GetInt("seed", 7));
  const auto elements = ParseElements(cfg.GetString("elements", "Cu,O"));
  c.absorbers = cfg.Has("absorbers")
                    ? ParseElements(*cfg.Get("absorbers"))
                    : elements;
  c.scatterers = cfg.Has("scatterers")
                     ? ParseElements(*cfg.Get("scatterers"))
                     : elements;
  if (cfg.Has("templates")) {
    c.templates.clear();
    std::stringstream ss(*cfg.Get("templates"));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) c.templates.push_back(ParseTemplate(item));
    }
  }
  c.bond_min = cfg.GetDouble("bond_min", c.bond_min);
  c.bond_max = cfg.GetDouble("bond_max", c.bond_max);
  c.strain = cfg.GetDouble("strain", c.strain);
  c.jitter = cfg.GetDouble("jitter", c.jitter);
  c.grid_points = static_cast<std::size_t>(
      cfg.GetInt("grid_points", static_cast<std::int64_t>(c.grid_points)));
  c.oracle = OracleParams::FromConfig(cfg);
  if (c.absorbers.empty() || c.scatterers.empty() || c.templates.empty()) {
    throw Error(ErrorCode::kParse, "synth needs elements and templates");
  }
  if (!(c.bond_min > 0.0 && c.bond_max >= c.bond_min)) {
    throw Error(ErrorCode::kParse, "invalid bond range");
  }
  return c;
}

std::vector<SynthSample> Generate(const SynthConfig& cfg) {
  if (cfg.absorbers.empty() || cfg.scatterers.empty() || cfg.templates.empty()) {
    throw Error(ErrorCode::kParse, "synth needs elements and templates");
  }
  const EnergyGrid xanes_grid = XanesGrid(cfg.oracle.e0, cfg.grid_points);
  const EnergyGrid exafs_grid = ExafsGrid(cfg.oracle.e0, cfg.grid_points);
  std::vector<SynthSample> out;
  out.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    Rng rng = Rng::Stream(cfg.seed, i);
    const std::string id = SampleId(i);
    const Template tmpl = cfg.templates[rng.Below(cfg.templates.size())];
    const Element absorber = cfg.absorbers[rng.Below(cfg.absorbers.size())];
    std::vector<Element> partners;
    for (const auto& e : cfg.scatterers) {
      if (e != absorber) partners.push_back(e);
    }
    if (partners.empty()) partners = cfg.scatterers;
    const Element partner = partners[rng.Below(partners.size())];
    const double bond = rng.Uniform(cfg.bond_min, cfg.bond_max) *
                        rng.Uniform(1.0 - cfg.strain, 1.0 + cfg.strain);
    const CrystalStructure ideal = MakeTemplate(tmpl, absorber, partner, bond, id);

    // Displace each site by a vector of length <= jitter.
    const Mat3 inv = Inverse(ideal.lattice().basis());
    const double half = cfg.jitter / std::sqrt(3.0);
    std::vector<Site> sites = ideal.sites();
    for (auto& site : sites) {
      const Vec3 dc{rng.Uniform(-half, half), rng.Uniform(-half, half),
                    rng.Uniform(-half, half)};
      for (int c = 0; c < 3; ++c) {
        double df = 0.0;
        for (int r = 0; r < 3; ++r) df += dc[r] * inv[r][c];
        site.frac[c] += df;
      }
    }
    CrystalStructure s(id, ideal.lattice(), std::move(sites));
    const std::size_t absorber_index = 0;
    DescriptorLabels labels = ExtractDescriptors(s, absorber_index);
    Spectrum exafs = SynthExafs(s, absorber_index, cfg.oracle, exafs_grid);
    Spectrum xanes = SynthXanes(labels, absorber, cfg.oracle, xanes_grid, id);
    LabeledSample sample{std::move(xanes), std::move(exafs), std::move(labels),
                         s, absorber_index};
    out.push_back({id, std::move(s), absorber_index, std::move(sample)});
  }
  return out;
}

std::filesystem::path WriteDataset(const std::vector<SynthSample>& samples,
                                   const std::filesystem::path& out_dir) {
  std::vector<io::ManifestRecord> records;
  for (const auto& s : samples) {
    io::ManifestRecord r;
    r.id = s.id;
    r.structure = "structures/" + s.id + ".json";
    r.absorber_index = s.absorber_index;
    r.xanes = "spectra/" + s.id + "_xanes.csv";
    r.exafs = "spectra/" + s.id + "_exafs.csv";
    r.labels = s.sample.labels;
    io::WriteStructure(out_dir / r.structure, s.structure);
    io::WriteSpectrum(out_dir / r.xanes, s.sample.xanes);
    io::WriteSpectrum(out_dir / r.exafs, s.sample.exafs);
    records.push_back(std::move(r));
  }
  const auto manifest = out_dir / "manifest.jsonl";
  io::WriteManifest(manifest, records);
  return manifest;
}

std::vector<LabeledSample> ToLabeledSamples(std::vector<SynthSample> samples) {
  std::vector<LabeledSample> out;
  out.reserve(samples.size());
  for (auto& s : samples) out.push_back(std::move(s.sample));
  return out;
}

}  // namespace xastruct::synth
