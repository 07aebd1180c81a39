#include "xastruct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "xastruct/error.hpp"

namespace xastruct {
namespace {

void CheckLengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::kLengthMismatch,
                std::to_string(a) + " predictions vs " + std::to_string(b) +
                    " targets");
  }
  if (a == 0) throw Error(ErrorCode::kEmptyInput, "no samples to evaluate");
}

nlohmann::json OrNull(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

double MeanAbsoluteError(std::span<const double> pred,
                         std::span<const double> target) {
  CheckLengths(pred.size(), target.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(target[i] - pred[i]);
  return s / static_cast<double>(pred.size());
}

double RSquared(std::span<const double> pred, std::span<const double> target) {
  CheckLengths(pred.size(), target.size());
  double mean = 0.0;
  for (double t : target) mean += t;
  mean /= static_cast<double>(target.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ss_res += (target[i] - pred[i]) * (target[i] - pred[i]);
    ss_tot += (target[i] - mean) * (target[i] - mean);
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

double Accuracy(std::span<const int> pred, std::span<const int> target) {
  CheckLengths(pred.size(), target.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == target[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double MacroF1(std::span<const int> pred, std::span<const int> target) {
  CheckLengths(pred.size(), target.size());
  std::set<int> classes(target.begin(), target.end());
  classes.insert(pred.begin(), pred.end());
  double total = 0.0;
  for (int c : classes) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == c, t = target[i] == c;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    // 2PR/(P+R) rewritten to stay defined when P or R is 0/0.
    total += tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
  }
  return total / static_cast<double>(classes.size());
}

double CrossEntropy(std::span<const std::vector<double>> probabilities,
                    std::span<const int> target) {
  CheckLengths(probabilities.size(), target.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto& p = probabilities[i];
    if (target[i] < 0 || static_cast<std::size_t>(target[i]) >= p.size()) {
      throw Error(ErrorCode::kLabel, "class index out of range");
    }
    loss -= std::log(std::max(p[static_cast<std::size_t>(target[i])], 1e-15));
  }
  return loss;
}

Metrics EvaluateRegression(std::span<const double> pred,
                           std::span<const double> target) {
  Metrics m;
  m.mae = MeanAbsoluteError(pred, target);
  m.r2 = RSquared(pred, target);
  return m;
}

Metrics EvaluateClassification(
    std::span<const int> pred, std::span<const int> target,
    std::span<const std::vector<double>> probabilities) {
  Metrics m;
  m.accuracy = Accuracy(pred, target);
  m.macro_f1 = MacroF1(pred, target);
  if (!probabilities.empty()) m.cross_entropy = CrossEntropy(probabilities, target);
  return m;
}

nlohmann::json MetricsJson(const Metrics& m) {
  return {{"mae", OrNull(m.mae)},
          {"r2", OrNull(m.r2)},
          {"accuracy", OrNull(m.accuracy)},
          {"macro_f1", OrNull(m.macro_f1)},
          {"cross_entropy", OrNull(m.cross_entropy)}};
}

}  // namespace xastruct
