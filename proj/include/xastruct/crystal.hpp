#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xastruct/element.hpp"

namespace xastruct {

using Vec3 = std::array<double, 3>;
using IVec3 = std::array<int, 3>;
using Mat3 = std::array<Vec3, 3>;

/// Cutoff used for graph edges and the EXAFS path search, in angstroms.
inline constexpr double kDefaultCutoff = 6.0;
/// First shell = neighbors within this factor of the nearest distance.
inline constexpr double kDefaultShellTolerance = 1.1;
/// Sites closer than this under periodic boundaries are rejected.
inline constexpr double kMinSeparation = 0.5;

/// Periodic cell. Rows of `basis()` are the lattice vectors in angstroms.
class Lattice {
 public:
  /// Throws Error(kInvalidStructure) unless det(basis) > 0.
  explicit Lattice(const Mat3& basis);

  static Lattice Cubic(double a);
  /// Row-major 9 values, as stored in structure files.
  static Lattice FromRowMajor(std::span<const double> values);

  const Mat3& basis() const noexcept { return basis_; }
  double volume() const noexcept { return volume_; }
  /// Distance between opposite cell faces along each reciprocal direction.
  const Vec3& heights() const noexcept { return heights_; }

  Vec3 ToCartesian(const Vec3& frac) const noexcept;
  Lattice Scaled(double factor) const;

 private:
  Mat3 basis_;
  double volume_;
  Vec3 heights_;
};

struct Site {
  Element element;
  Vec3 frac;  // wrapped into [0, 1)
};

Vec3 WrapFractional(const Vec3& frac) noexcept;

class CrystalStructure {
 public:
  /// Wraps coordinates; throws Error(kInvalidStructure) on zero sites or any
  /// pair (including periodic self-images) closer than kMinSeparation.
  CrystalStructure(std::string id, Lattice lattice, std::vector<Site> sites);

  const std::string& id() const noexcept { return id_; }
  const Lattice& lattice() const noexcept { return lattice_; }
  const std::vector<Site>& sites() const noexcept { return sites_; }
  std::size_t size() const noexcept { return sites_.size(); }

  Vec3 Cartesian(std::size_t site) const;

  CrystalStructure Translated(const Vec3& frac_shift) const;
  /// New site i is old site order[i].
  CrystalStructure Permuted(std::span<const std::size_t> order) const;
  CrystalStructure Scaled(double factor) const;

 private:
  std::string id_;
  Lattice lattice_;
  std::vector<Site> sites_;
};

struct Neighbor {
  std::size_t site;
  IVec3 image;
  double distance;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Every (site, image) within `cutoff` of `center`, excluding the center's own
/// zero-offset image. Sorted by (distance, site, image).
std::vector<Neighbor> NeighborList(const CrystalStructure& s,
                                   std::size_t center, double cutoff);

/// Neighbors with distance <= tol_factor * d_min, ascending by distance.
/// Throws Error(kNoNeighbors) on empty input.
std::vector<Neighbor> FirstShell(std::span<const Neighbor> neighbors,
                                 double tol_factor = kDefaultShellTolerance);

struct GraphEdge {
  std::size_t i;
  std::size_t j;
  double distance;
  IVec3 image;
};

struct StructureGraph {
  std::vector<Element> node_elements;
  std::vector<Vec3> node_cart;
  /// Sorted by (i, j, image).
  std::vector<GraphEdge> edges;
  std::size_t absorber_index = 0;
  /// 1 for the absorber and its first-shell neighbors, 0 elsewhere.
  std::vector<std::uint8_t> mask;

  std::size_t num_nodes() const noexcept { return node_elements.size(); }
};

StructureGraph BuildGraph(const CrystalStructure& s, std::size_t absorber,
                          double cutoff = kDefaultCutoff,
                          double tol_factor = kDefaultShellTolerance);

struct DescriptorLabels {
  int cn = 0;
  double mnnd = 0.0;
  Element neighbor_type{1};
  std::vector<double> shell_distances;
};

/// CN, MNND and dominant first-shell element around `absorber`. Ties in the
/// element count go to the lowest atomic number.
DescriptorLabels ExtractDescriptors(const CrystalStructure& s,
                                    std::size_t absorber,
                                    double tol_factor = kDefaultShellTolerance,
                                    double search_radius = kDefaultCutoff);

}  // namespace xastruct
