#include "xastruct/exafs_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include "xastruct/error.hpp"

namespace xastruct {

OracleParams OracleParams::FromConfig(const KeyValueConfig& cfg) {
  OracleParams p;
  p.s0_squared = cfg.GetDouble("s0_squared", p.s0_squared);
  p.e0 = cfg.GetDouble("e0_ev", p.e0);
  p.lambda_a = cfg.GetDouble("lambda_a", p.lambda_a);
  p.lambda_b = cfg.GetDouble("lambda_b", p.lambda_b);
  p.amp_scale = cfg.GetDouble("amp_scale", p.amp_scale);
  p.sigma2 = cfg.GetDouble("sigma2", p.sigma2);
  p.r_phase = cfg.GetDouble("r_phase", p.r_phase);
  p.Validate();
  return p;
}

void OracleParams::Validate() const {
  if (!(s0_squared > 0.0 && s0_squared <= 1.2)) {
    throw Error(ErrorCode::kOutOfRange, "s0_squared must lie in (0, 1.2]");
  }
  // lambda is affine in k, so checking both ends of (0, 16] suffices.
  if (!(MeanFreePath(0.0) > 0.0 && MeanFreePath(16.0) > 0.0)) {
    throw Error(ErrorCode::kOutOfRange, "mean free path must stay positive");
  }
  if (!(sigma2 >= 0.0)) throw Error(ErrorCode::kOutOfRange, "sigma2 must be >= 0");
}

double Wavenumber(double e, double e0) {
  if (e < e0) {
    throw Error(ErrorCode::kBelowEdge, "energy " + std::to_string(e) +
                                           " eV is below the edge " +
                                           std::to_string(e0) + " eV");
  }
  return kWavenumberPerSqrtEv * std::sqrt(e - e0);
}

double ChiShell(const ScatteringShell& shell, const OracleParams& params,
                double k) {
  const double r = shell.radius;
  const double amplitude = params.amp_scale * shell.z_scatter / (1.0 + k * k);
  const double phase = -2.0 * k * params.r_phase;
  return shell.n_atoms * params.s0_squared * amplitude / (k * r * r) *
         std::exp(-2.0 * r / params.MeanFreePath(k)) *
         std::exp(-2.0 * shell.sigma2 * k * k) *
         std::sin(2.0 * k * r + phase);
}

double ChiTotal(std::span<const ScatteringShell> shells,
                const OracleParams& params, double k) {
  double chi = 0.0;
  for (const auto& shell : shells) chi += ChiShell(shell, params, k);
  return chi;
}

std::vector<ScatteringShell> ScatteringShells(const CrystalStructure& s,
                                              std::size_t absorber,
                                              const OracleParams& params) {
  auto neighbors = NeighborList(s, absorber, kDefaultCutoff);
  if (neighbors.empty()) {
    throw Error(ErrorCode::kNoNeighbors,
                "no scatterers within " + std::to_string(kDefaultCutoff) + " A");
  }
  auto first = FirstShell(neighbors, kDefaultShellTolerance);
  std::vector<Neighbor> paths = first;
  // Neighbor lists are distance-sorted, so the remainder starts right after
  // the first shell.
  std::vector<Neighbor> rest(neighbors.begin() + static_cast<long>(first.size()),
                             neighbors.end());
  if (!rest.empty()) {
    auto second = FirstShell(rest, kDefaultShellTolerance);
    paths.insert(paths.end(), second.begin(), second.end());
  }

  struct Bin {
    int count = 0;
    double distance_sum = 0.0;
  };
  std::map<std::pair<int, long>, Bin> bins;
  for (const auto& n : paths) {
    const int z = s.sites()[n.site].element.atomic_number();
    const long key = std::lround(n.distance / 0.01);
    auto& bin = bins[{z, key}];
    ++bin.count;
    bin.distance_sum += n.distance;
  }
  std::vector<ScatteringShell> shells;
  for (const auto& [key, bin] : bins) {
    shells.push_back({bin.count, bin.distance_sum / bin.count, key.first,
                      params.sigma2});
  }
  std::sort(shells.begin(), shells.end(),
            [](const ScatteringShell& a, const ScatteringShell& b) {
              return std::pair(a.radius, a.z_scatter) <
                     std::pair(b.radius, b.z_scatter);
            });
  return shells;
}

EnergyGrid ExafsGrid(double e0, std::size_t n, double k_lo, double k_hi) {
  std::vector<double> energies(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double k = k_lo + (k_hi - k_lo) * static_cast<double>(i) /
                                static_cast<double>(n - 1);
    const double de = k / kWavenumberPerSqrtEv;
    energies[i] = e0 + de * de;
  }
  return EnergyGrid(std::move(energies));
}

EnergyGrid XanesGrid(double e0, std::size_t n) {
  return EnergyGrid::Linspace(e0 - 30.0, e0 + 70.0, n);
}

Spectrum SynthExafs(const CrystalStructure& s, std::size_t absorber,
                    const OracleParams& params, const EnergyGrid& grid) {
  if (!(grid.front() > params.e0)) {
    throw Error(ErrorCode::kBelowEdge, "EXAFS grid must lie above e0");
  }
  const auto shells = ScatteringShells(s, absorber, params);
  std::vector<double> mu(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    mu[i] = 1.0 + ChiTotal(shells, params, Wavenumber(grid[i], params.e0));
  }
  return Spectrum(grid, std::move(mu), SpectrumKind::kExafs, Edge::kK,
                  s.sites()[absorber].element, s.id());
}

Spectrum SynthXanes(const DescriptorLabels& labels, Element absorber,
                    const OracleParams& params, const EnergyGrid& grid,
                    std::string structure_id) {
  using P = XanesProxyShape;
  if (!(grid.front() <= params.e0 && grid.back() >= params.e0)) {
    throw Error(ErrorCode::kOutOfRange, "XANES grid must span e0");
  }
  if (!(labels.mnnd > 0.0)) {
    throw Error(ErrorCode::kOutOfRange, "mnnd must be positive");
  }
  const double wl_height = P::kWhiteLinePerCn * labels.cn;
  const double wl_center = params.e0 + P::kWhiteLineOffset / labels.mnnd;
  const double pre_height = P::kPreEdgePerZ * labels.neighbor_type.atomic_number();
  const double pre_center = params.e0 + P::kPreEdgeOffset;
  auto gauss = [](double x, double center, double width) {
    const double u = (x - center) / width;
    return std::exp(-0.5 * u * u);
  };
  std::vector<double> mu(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double e = grid[i];
    mu[i] = 0.5 + std::atan((e - params.e0) / P::kStepWidth) / M_PI +
            wl_height * gauss(e, wl_center, P::kWhiteLineWidth) +
            pre_height * gauss(e, pre_center, P::kPreEdgeWidth);
  }
  return Spectrum(grid, std::move(mu), SpectrumKind::kXanes, Edge::kK,
                  absorber, std::move(structure_id));
}

}  // namespace xastruct
