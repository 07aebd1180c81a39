#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xastruct/config.hpp"
#include "xastruct/crystal.hpp"
#include "xastruct/spectra.hpp"

namespace xastruct {

/// sqrt(2 m_e) / hbar expressed in 1/angstrom per sqrt(eV).
inline constexpr double kWavenumberPerSqrtEv = 0.5123;

/// Parameters of the single-scattering EXAFS surrogate.
struct OracleParams {
  double s0_squared = 0.9;
  double e0 = 8979.0;  // eV
  // Mean free path lambda(k) = lambda_a * k + lambda_b, angstroms.
  double lambda_a = 0.8;
  double lambda_b = 3.0;
  double amp_scale = 1.0;
  double sigma2 = 0.003;   // angstrom^2
  double r_phase = 0.35;   // angstrom; phi(k) = -2 k r_phase

  double MeanFreePath(double k) const { return lambda_a * k + lambda_b; }

  /// Reads s0_squared, e0_ev, lambda_a, lambda_b, amp_scale, sigma2, r_phase;
  /// missing keys keep their defaults. Throws Error(kOutOfRange) on invalid
  /// values.
  static OracleParams FromConfig(const KeyValueConfig& cfg);
  void Validate() const;
};

struct ScatteringShell {
  int n_atoms = 1;
  double radius = 0.0;  // angstrom
  int z_scatter = 1;
  double sigma2 = 0.0;  // angstrom^2
};

/// Photoelectron wavenumber in 1/angstrom. Throws Error(kBelowEdge) if e < e0.
double Wavenumber(double e, double e0);

/// Single-shell chi(k). Requires k > 0.
double ChiShell(const ScatteringShell& shell, const OracleParams& params,
                double k);

/// Sum of ChiShell over `shells`.
double ChiTotal(std::span<const ScatteringShell> shells,
                const OracleParams& params, double k);

/// First and second coordination shells of `absorber` (neighbors within the
/// default cutoff), binned by (scatterer, distance rounded to 0.01 A). Each
/// bin's radius is the mean distance of its members.
std::vector<ScatteringShell> ScatteringShells(const CrystalStructure& s,
                                              std::size_t absorber,
                                              const OracleParams& params);

/// Grid uniform in k over [k_lo, k_hi], mapped back to energy above e0.
EnergyGrid ExafsGrid(double e0, std::size_t n = kDefaultGridLength,
                     double k_lo = 2.0, double k_hi = 14.0);
/// Uniform energy grid over [e0 - 30, e0 + 70] eV.
EnergyGrid XanesGrid(double e0, std::size_t n = kDefaultGridLength);

/// mu(E) = 1 + chi(k(E)) over the structure's first two shells.
Spectrum SynthExafs(const CrystalStructure& s, std::size_t absorber,
                    const OracleParams& params, const EnergyGrid& grid);

/// Descriptor-keyed XANES stand-in: arctangent edge step, a white line whose
/// height tracks CN and position tracks MNND, and a pre-edge feature whose
/// height tracks the neighbor's atomic number.
Spectrum SynthXanes(const DescriptorLabels& labels, Element absorber,
                    const OracleParams& params, const EnergyGrid& grid,
                    std::string structure_id = {});

/// Closed-form pieces of the XANES proxy, exposed for tests and plots.
struct XanesProxyShape {
  static constexpr double kStepWidth = 1.5;         // eV
  static constexpr double kWhiteLinePerCn = 0.1;
  static constexpr double kWhiteLineOffset = 20.0;  // eV * angstrom
  static constexpr double kWhiteLineWidth = 2.0;    // eV (Gaussian sigma)
  static constexpr double kPreEdgePerZ = 0.002;
  static constexpr double kPreEdgeOffset = -8.0;    // eV from e0
  static constexpr double kPreEdgeWidth = 1.5;      // eV
};

}  // namespace xastruct
