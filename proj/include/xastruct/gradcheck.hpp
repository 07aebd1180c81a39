#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xastruct/autodiff.hpp"
#include "xastruct/random.hpp"

namespace xastruct::gradcheck {

struct Options {
  int seeds = 20;
  double eps = 1e-4;        // five-point central-difference step
  double tolerance = 1e-4;  // on |a - n| / max(|a| + |n|, 1e-6)
  std::size_t max_entries = 16;  // coordinates probed per tensor
  std::uint64_t base_seed = 1;
  /// Adds a case whose backward is deliberately wrong.
  bool inject_fault = false;
};

struct CaseResult {
  std::string name;
  double max_rel_error = 0.0;
  int seeds = 0;
  std::size_t coordinates = 0;
  bool passed = false;
};

/// Everything needed to differentiate one op or block: the tensors to
/// perturb and a function recomputing the output from their current values.
struct Fixture {
  std::vector<ad::Parameter*> params;
  std::function<ad::Var()> forward;
  std::shared_ptr<void> owner;  // keeps modules alive
};

struct Case {
  std::string name;
  std::function<Fixture(Rng&)> make;
};

/// Relative error as used by the suite.
double RelativeError(double analytic, double numeric);

/// Largest relative error between backprop and central differences of
/// sum(forward() * R) for a fixed random R, over sampled coordinates.
double CheckFixture(const Fixture& f, const Options& opt, Rng& rng,
                    std::size_t* coordinates = nullptr);

/// Every differentiable op and composed block.
std::vector<Case> StandardCases(bool inject_fault);

std::vector<CaseResult> RunSuite(const Options& opt);

/// One line per case: name, max relative error, PASS/FAIL.
std::string FormatReport(const std::vector<CaseResult>& results);

}  // namespace xastruct::gradcheck
