#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <set>

#include "oracles.hpp"
#include "xastruct/crystal.hpp"
#include "xastruct/error.hpp"

namespace xastruct {
namespace {

const Element kCu = Element::FromSymbol("Cu");
const Element kNa = Element::FromSymbol("Na");
const Element kCl = Element::FromSymbol("Cl");

CrystalStructure SimpleCubic(double a) {
  return CrystalStructure("sc", Lattice::Cubic(a), {{kCu, {0, 0, 0}}});
}

CrystalStructure RockSaltConventional(double a) {
  std::vector<Site> sites;
  for (const Vec3& f : std::vector<Vec3>{{0, 0, 0}, {0, .5, .5}, {.5, 0, .5}, {.5, .5, 0}})
    sites.push_back({kNa, f});
  for (const Vec3& f : std::vector<Vec3>{{.5, 0, 0}, {0, .5, 0}, {0, 0, .5}, {.5, .5, .5}})
    sites.push_back({kCl, f});
  return CrystalStructure("nacl", Lattice::Cubic(a), sites);
}

CrystalStructure RockSaltPrimitive(double a) {
  const double h = a / 2;
  return CrystalStructure("nacl-prim", Lattice(Mat3{Vec3{0, h, h}, Vec3{h, 0, h}, Vec3{h, h, 0}}),
                          {{kNa, {0, 0, 0}}, {kCl, {.5, .5, .5}}});
}

std::vector<Neighbor> FromDistances(std::vector<double> d) {
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < d.size(); ++i) out.push_back({i, {0, 0, 0}, d[i]});
  return out;
}

TEST(NeighborList, SimpleCubicHasSixAtLatticeConstant) {
  const auto n = NeighborList(SimpleCubic(3.0), 0, 3.5);
  ASSERT_EQ(n.size(), 6u);
  for (const auto& nb : n) EXPECT_NEAR(nb.distance, 3.0, 1e-12);
  EXPECT_EQ(n.size(), oracle::BruteForceNeighbors(SimpleCubic(3.0), 0, 3.5).size());
}

TEST(NeighborList, CutoffBelowShortestImageIsEmpty) {
  EXPECT_TRUE(NeighborList(SimpleCubic(3.0), 0, 0.1).empty());
}

TEST(NeighborList, RockSaltCenterSeesSixOfTheOtherSpecies) {
  const auto s = RockSaltConventional(5.64);
  const auto n = NeighborList(s, 0, 3.0);
  ASSERT_EQ(n.size(), 6u);
  for (const auto& nb : n) {
    EXPECT_EQ(s.sites()[nb.site].element, kCl);
    EXPECT_NEAR(nb.distance, 2.82, 1e-9);
  }
}

TEST(NeighborList, DegenerateLatticeIsRejected) {
  try {
    Lattice(Mat3{Vec3{1, 0, 0}, Vec3{2, 0, 0}, Vec3{0, 0, 1}});
    FAIL() << "expected invalid-structure";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidStructure);
  }
  // Left-handed basis: determinant below zero.
  EXPECT_THROW(Lattice(Mat3{Vec3{0, 1, 0}, Vec3{1, 0, 0}, Vec3{0, 0, 1}}), Error);
}

TEST(NeighborList, MatchesBruteForceOnRandomStructures) {
  Rng rng(20240611);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = oracle::RandomStructure(rng, 8);
    const double cutoff = rng.Uniform(1.0, 8.0);
    const std::size_t center = rng.Below(s.size());
    const auto got = NeighborList(s, center, cutoff);
    const auto want = oracle::BruteForceNeighbors(s, center, cutoff);
    std::map<std::tuple<std::size_t, int, int, int>, double> ref;
    for (const auto& p : want) ref[{p.site, p.image[0], p.image[1], p.image[2]}] = p.distance;
    ASSERT_EQ(got.size(), ref.size()) << "trial " << trial;
    for (const auto& nb : got) {
      const auto it = ref.find({nb.site, nb.image[0], nb.image[1], nb.image[2]});
      ASSERT_NE(it, ref.end()) << "trial " << trial;
      EXPECT_NEAR(nb.distance, it->second, 1e-9);
    }
  }
}

TEST(FirstShell, KeepsDistancesWithinTolerance) {
  const auto shell = FirstShell(FromDistances({2.0, 2.05, 2.9}), 1.1);
  ASSERT_EQ(shell.size(), 2u);
  EXPECT_EQ(shell[0].distance, 2.0);
  EXPECT_EQ(shell[1].distance, 2.05);
}

TEST(FirstShell, SingletonSurvivesAnyTolerance) {
  for (double tol : {1.0, 1.1, 3.0}) {
    const auto shell = FirstShell(FromDistances({2.0}), tol);
    ASSERT_EQ(shell.size(), 1u);
    EXPECT_EQ(shell[0].distance, 2.0);
  }
}

TEST(FirstShell, SimpleCubicShellIsAllSix) {
  EXPECT_EQ(FirstShell(NeighborList(SimpleCubic(3.0), 0, 6.0), 1.1).size(), 6u);
}

TEST(FirstShell, EmptyInputIsAnError) {
  try {
    FirstShell(std::vector<Neighbor>{}, 1.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoNeighbors);
  }
}

TEST(FirstShell, UnitToleranceKeepsOnlyMinimumDistance) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = oracle::RandomStructure(rng, 6);
    const auto n = NeighborList(s, 0, 7.0);
    if (n.empty()) continue;
    double dmin = 1e9;
    for (const auto& nb : n) dmin = std::min(dmin, nb.distance);
    const auto shell = FirstShell(n, 1.0);
    std::size_t expected = 0;
    for (const auto& nb : n) expected += nb.distance == dmin;
    EXPECT_EQ(shell.size(), expected);
    for (const auto& nb : shell) EXPECT_EQ(nb.distance, dmin);
  }
}

TEST(BuildGraph, OneAtomCubicCell) {
  const auto g = BuildGraph(SimpleCubic(3.0), 0, 3.5);
  EXPECT_EQ(g.num_nodes(), 1u);
  EXPECT_EQ(g.edges.size(), 6u);
  for (const auto& e : g.edges) {
    EXPECT_EQ(e.i, 0u);
    EXPECT_EQ(e.j, 0u);
  }
  EXPECT_EQ(g.mask, std::vector<std::uint8_t>{1});
}

TEST(BuildGraph, TinyCutoffGivesNoEdgesAndAbsorberOnlyMask) {
  const auto g = BuildGraph(RockSaltConventional(5.64), 3, 0.2);
  EXPECT_TRUE(g.edges.empty());
  std::vector<std::uint8_t> want(8, 0);
  want[3] = 1;
  EXPECT_EQ(g.mask, want);
}

TEST(BuildGraph, RockSaltPrimitiveMaskCoversBothSites) {
  const auto g = BuildGraph(RockSaltPrimitive(5.64), 0, 3.0);
  EXPECT_EQ(g.mask, (std::vector<std::uint8_t>{1, 1}));
}

TEST(BuildGraph, EdgesFollowNeighborListForEveryNode) {
  Rng rng(11);
  const auto s = oracle::RandomStructure(rng, 5);
  const auto g = BuildGraph(s, 0, 4.0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < s.size(); ++i) total += oracle::BruteForceNeighbors(s, i, 4.0).size();
  EXPECT_EQ(g.edges.size(), total);
}

TEST(ExtractDescriptors, SimpleCubic) {
  const auto d = ExtractDescriptors(SimpleCubic(3.0), 0);
  EXPECT_EQ(d.cn, 6);
  EXPECT_NEAR(d.mnnd, 3.0, 1e-12);
  EXPECT_EQ(d.neighbor_type, kCu);
}

TEST(ExtractDescriptors, RockSalt) {
  const auto d = ExtractDescriptors(RockSaltConventional(5.64), 0);
  EXPECT_EQ(d.cn, 6);
  EXPECT_NEAR(d.mnnd, 2.82, 1e-9);
  EXPECT_EQ(d.neighbor_type, kCl);
}

TEST(ExtractDescriptors, EqualShellDistancesGiveExactMean) {
  // Cubic cells of 4.0 have exactly representable shell distances.
  const auto d = ExtractDescriptors(SimpleCubic(4.0), 0);
  EXPECT_EQ(d.mnnd, 4.0);
}

TEST(ExtractDescriptors, IsolatedAtomHasNoNeighbors) {
  try {
    ExtractDescriptors(SimpleCubic(10.0), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoNeighbors);
  }
}

TEST(ExtractDescriptors, TieGoesToLowestAtomicNumber) {
  // Cu absorber with two O and two S at the same distance in a square.
  const Element o = Element::FromSymbol("O"), s = Element::FromSymbol("S");
  const CrystalStructure st("tie", Lattice(Mat3{Vec3{4, 0, 0}, Vec3{0, 4, 0}, Vec3{0, 0, 12}}),
                            {{kCu, {0.5, 0.5, 0.5}},
                             {o, {0.25, 0.5, 0.5}},
                             {o, {0.75, 0.5, 0.5}},
                             {s, {0.5, 0.25, 0.5}},
                             {s, {0.5, 0.75, 0.5}}});
  const auto d = ExtractDescriptors(st, 0);
  EXPECT_EQ(d.cn, 4);
  EXPECT_EQ(d.neighbor_type, o);
}

TEST(ExtractDescriptors, LabelsAreShellSizeAndMean) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = oracle::RandomStructure(rng, 6);
    DescriptorLabels d;
    try {
      d = ExtractDescriptors(s, 0);
    } catch (const Error&) {
      continue;
    }
    ASSERT_EQ(static_cast<std::size_t>(d.cn), d.shell_distances.size());
    const double mean = std::accumulate(d.shell_distances.begin(), d.shell_distances.end(), 0.0) /
                        static_cast<double>(d.cn);
    EXPECT_NEAR(d.mnnd, mean, 1e-12);
  }
}

TEST(Invariance, TranslationLeavesDistancesAndLabelsUnchanged) {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = oracle::RandomStructure(rng, 6);
    const auto t = s.Translated({rng.Uniform(), rng.Uniform(), rng.Uniform()});
    for (std::size_t c = 0; c < s.size(); ++c) {
      const auto a = NeighborList(s, c, 6.0), b = NeighborList(t, c, 6.0);
      ASSERT_EQ(a.size(), b.size());
      for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k].distance, b[k].distance, 1e-9);
    }
    DescriptorLabels da, db;
    try {
      da = ExtractDescriptors(s, 0);
    } catch (const Error&) {
      continue;
    }
    db = ExtractDescriptors(t, 0);
    EXPECT_EQ(da.cn, db.cn);
    EXPECT_NEAR(da.mnnd, db.mnnd, 1e-9);
    EXPECT_EQ(da.neighbor_type, db.neighbor_type);
  }
}

TEST(Invariance, RelabelingKeepsEdgeDistancesAndLabels) {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = oracle::RandomStructure(rng, 7);
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    rng.Shuffle(std::span<std::size_t>(order));
    const auto p = s.Permuted(order);
    const std::size_t new_absorber =
        static_cast<std::size_t>(std::find(order.begin(), order.end(), 0) - order.begin());
    const auto ga = BuildGraph(s, 0, 5.0), gb = BuildGraph(p, new_absorber, 5.0);
    std::multiset<long long> da, db;
    for (const auto& e : ga.edges) da.insert(std::llround(e.distance * 1e8));
    for (const auto& e : gb.edges) db.insert(std::llround(e.distance * 1e8));
    EXPECT_EQ(da, db);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(gb.mask[i], ga.mask[order[i]]);
    DescriptorLabels la;
    try {
      la = ExtractDescriptors(s, 0);
    } catch (const Error&) {
      continue;
    }
    const auto lb = ExtractDescriptors(p, new_absorber);
    EXPECT_EQ(la.cn, lb.cn);
    EXPECT_NEAR(la.mnnd, lb.mnnd, 1e-9);
    EXPECT_EQ(la.neighbor_type, lb.neighbor_type);
  }
}

TEST(CrystalStructure, RejectsOverlappingSites) {
  try {
    CrystalStructure("bad", Lattice::Cubic(3.0), {{kCu, {0, 0, 0}}, {kCu, {0.05, 0, 0}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidStructure);
  }
  EXPECT_THROW(CrystalStructure("empty", Lattice::Cubic(3.0), {}), Error);
}

}  // namespace
}  // namespace xastruct
