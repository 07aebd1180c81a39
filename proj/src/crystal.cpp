#include "xastruct/crystal.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

#include "xastruct/error.hpp"

namespace xastruct {
namespace {

Vec3 Cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

double Dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

double Norm(const Vec3& a) { return std::sqrt(Dot(a, a)); }

void CheckIndex(const CrystalStructure& s, std::size_t index) {
  if (index >= s.size()) {
    throw Error(ErrorCode::kOutOfRange,
                "site index " + std::to_string(index) + " out of range for " +
                    std::to_string(s.size()) + " sites");
  }
}

}  // namespace

Lattice::Lattice(const Mat3& basis) : basis_(basis) {
  volume_ = Dot(basis_[0], Cross(basis_[1], basis_[2]));
  if (!(volume_ > 0.0) || !std::isfinite(volume_)) {
    throw Error(ErrorCode::kInvalidStructure,
                "lattice determinant must be positive, got " +
                    std::to_string(volume_));
  }
  for (int i = 0; i < 3; ++i) {
    heights_[i] =
        volume_ / Norm(Cross(basis_[(i + 1) % 3], basis_[(i + 2) % 3]));
  }
}

Lattice Lattice::Cubic(double a) {
  return Lattice(Mat3{Vec3{a, 0, 0}, Vec3{0, a, 0}, Vec3{0, 0, a}});
}

Lattice Lattice::FromRowMajor(std::span<const double> values) {
  if (values.size() != 9) {
    throw Error(ErrorCode::kParse, "lattice needs 9 values, got " +
                                       std::to_string(values.size()));
  }
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m[r][c] = values[3 * r + c];
  return Lattice(m);
}

Vec3 Lattice::ToCartesian(const Vec3& frac) const noexcept {
  Vec3 out{0, 0, 0};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[c] += frac[r] * basis_[r][c];
  return out;
}

Lattice Lattice::Scaled(double factor) const {
  Mat3 m = basis_;
  for (auto& row : m)
    for (double& v : row) v *= factor;
  return Lattice(m);
}

Vec3 WrapFractional(const Vec3& frac) noexcept {
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    double v = frac[i] - std::floor(frac[i]);
    // floor can round up to exactly 1.0 for tiny negative inputs.
    if (v >= 1.0) v = 0.0;
    out[i] = v;
  }
  return out;
}

CrystalStructure::CrystalStructure(std::string id, Lattice lattice,
                                   std::vector<Site> sites)
    : id_(std::move(id)), lattice_(std::move(lattice)), sites_(std::move(sites)) {
  if (sites_.empty()) {
    throw Error(ErrorCode::kInvalidStructure, "structure has no sites");
  }
  for (auto& site : sites_) site.frac = WrapFractional(site.frac);
  for (std::size_t i = 0; i < sites_.size(); ++i) {
    auto close = NeighborList(*this, i, kMinSeparation);
    if (!close.empty()) {
      throw Error(ErrorCode::kInvalidStructure,
                  "sites " + std::to_string(i) + " and " +
                      std::to_string(close.front().site) + " are " +
                      std::to_string(close.front().distance) +
                      " A apart (minimum " + std::to_string(kMinSeparation) +
                      ")");
    }
  }
}

Vec3 CrystalStructure::Cartesian(std::size_t site) const {
  CheckIndex(*this, site);
  return lattice_.ToCartesian(sites_[site].frac);
}

CrystalStructure CrystalStructure::Translated(const Vec3& frac_shift) const {
  std::vector<Site> moved = sites_;
  for (auto& site : moved) {
    for (int i = 0; i < 3; ++i) site.frac[i] += frac_shift[i];
  }
  return CrystalStructure(id_, lattice_, std::move(moved));
}

CrystalStructure CrystalStructure::Permuted(
    std::span<const std::size_t> order) const {
  if (order.size() != sites_.size()) {
    throw Error(ErrorCode::kLengthMismatch, "permutation length mismatch");
  }
  std::vector<Site> out;
  out.reserve(order.size());
  for (std::size_t idx : order) {
    CheckIndex(*this, idx);
    out.push_back(sites_[idx]);
  }
  return CrystalStructure(id_, lattice_, std::move(out));
}

CrystalStructure CrystalStructure::Scaled(double factor) const {
  return CrystalStructure(id_, lattice_.Scaled(factor), sites_);
}

std::vector<Neighbor> NeighborList(const CrystalStructure& s,
                                   std::size_t center, double cutoff) {
  CheckIndex(s, center);
  if (!(cutoff > 0.0)) {
    throw Error(ErrorCode::kOutOfRange, "cutoff must be positive");
  }
  const Lattice& lat = s.lattice();
  // |frac difference| along axis i is at most 1 + |T_i|, and the Cartesian
  // distance is at least heights[i] * |frac difference along i|.
  IVec3 bound;
  for (int i = 0; i < 3; ++i) {
    bound[i] = static_cast<int>(std::ceil(cutoff / lat.heights()[i])) + 1;
  }
  const Vec3& fc = s.sites()[center].frac;
  std::vector<Neighbor> out;
  for (std::size_t j = 0; j < s.size(); ++j) {
    const Vec3& fj = s.sites()[j].frac;
    const Vec3 base{fj[0] - fc[0], fj[1] - fc[1], fj[2] - fc[2]};
    for (int a = -bound[0]; a <= bound[0]; ++a) {
      for (int b = -bound[1]; b <= bound[1]; ++b) {
        for (int c = -bound[2]; c <= bound[2]; ++c) {
          if (j == center && a == 0 && b == 0 && c == 0) continue;
          const Vec3 delta{base[0] + a, base[1] + b, base[2] + c};
          const double d = Norm(lat.ToCartesian(delta));
          if (d <= cutoff) out.push_back({j, IVec3{a, b, c}, d});
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Neighbor& x, const Neighbor& y) {
    return std::tie(x.distance, x.site, x.image) <
           std::tie(y.distance, y.site, y.image);
  });
  return out;
}

std::vector<Neighbor> FirstShell(std::span<const Neighbor> neighbors,
                                 double tol_factor) {
  if (neighbors.empty()) {
    throw Error(ErrorCode::kNoNeighbors, "first shell of an empty neighbor list");
  }
  if (!(tol_factor >= 1.0)) {
    throw Error(ErrorCode::kOutOfRange, "tol_factor must be >= 1");
  }
  double d_min = neighbors.front().distance;
  for (const auto& n : neighbors) d_min = std::min(d_min, n.distance);
  // Relative slack absorbs last-bit differences between symmetry-equivalent
  // distances reached through different images.
  const double limit = tol_factor * d_min * (1.0 + 1e-9);
  std::vector<Neighbor> shell;
  for (const auto& n : neighbors) {
    if (n.distance <= limit) shell.push_back(n);
  }
  std::stable_sort(shell.begin(), shell.end(),
                   [](const Neighbor& x, const Neighbor& y) {
                     return x.distance < y.distance;
                   });
  return shell;
}

StructureGraph BuildGraph(const CrystalStructure& s, std::size_t absorber,
                          double cutoff, double tol_factor) {
  CheckIndex(s, absorber);
  StructureGraph g;
  g.absorber_index = absorber;
  g.mask.assign(s.size(), 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    g.node_elements.push_back(s.sites()[i].element);
    g.node_cart.push_back(s.Cartesian(i));
    auto neighbors = NeighborList(s, i, cutoff);
    std::sort(neighbors.begin(), neighbors.end(),
              [](const Neighbor& x, const Neighbor& y) {
                return std::tie(x.site, x.image) < std::tie(y.site, y.image);
              });
    for (const auto& n : neighbors) {
      g.edges.push_back({i, n.site, n.distance, n.image});
    }
    if (i == absorber && !neighbors.empty()) {
      for (const auto& n : FirstShell(neighbors, tol_factor)) g.mask[n.site] = 1;
    }
  }
  g.mask[absorber] = 1;
  return g;
}

DescriptorLabels ExtractDescriptors(const CrystalStructure& s,
                                    std::size_t absorber, double tol_factor,
                                    double search_radius) {
  const auto neighbors = NeighborList(s, absorber, search_radius);
  if (neighbors.empty()) {
    throw Error(ErrorCode::kNoNeighbors,
                "no neighbors of site " + std::to_string(absorber) +
                    " within " + std::to_string(search_radius) + " A");
  }
  const auto shell = FirstShell(neighbors, tol_factor);
  DescriptorLabels labels;
  labels.cn = static_cast<int>(shell.size());
  std::map<int, int> counts;
  for (const auto& n : shell) {
    labels.shell_distances.push_back(n.distance);
    ++counts[s.sites()[n.site].element.atomic_number()];
  }
  labels.mnnd = std::accumulate(labels.shell_distances.begin(),
                                labels.shell_distances.end(), 0.0) /
                static_cast<double>(shell.size());
  // std::map iterates by ascending Z, so strict '>' keeps the lowest Z on ties.
  int best_z = 0;
  int best_count = 0;
  for (const auto& [z, count] : counts) {
    if (count > best_count) {
      best_z = z;
      best_count = count;
    }
  }
  labels.neighbor_type = Element(best_z);
  return labels;
}

}  // namespace xastruct
