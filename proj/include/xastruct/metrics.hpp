#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace xastruct {

/// Evaluation scores. Fields that do not apply to a task stay empty and are
/// written as null.
struct Metrics {
  std::optional<double> mae;
  std::optional<double> r2;
  std::optional<double> accuracy;
  std::optional<double> macro_f1;
  std::optional<double> cross_entropy;
};

/// Mean absolute error.
double MeanAbsoluteError(std::span<const double> pred,
                         std::span<const double> target);
/// 1 - SS_res / SS_tot. When the targets are constant, returns 1 for an exact
/// fit and 0 otherwise.
double RSquared(std::span<const double> pred, std::span<const double> target);
double Accuracy(std::span<const int> pred, std::span<const int> target);
/// Mean over classes present in either input of 2TP / (2TP + FP + FN); a
/// class with no true positives scores 0.
double MacroF1(std::span<const int> pred, std::span<const int> target);
/// -sum_i log p_i[target_i], summed (not averaged) over samples.
/// Probabilities are clamped to >= 1e-15 before the log.
double CrossEntropy(std::span<const std::vector<double>> probabilities,
                    std::span<const int> target);

/// MAE and R^2; throws Error(kLengthMismatch) / Error(kEmptyInput).
Metrics EvaluateRegression(std::span<const double> pred,
                           std::span<const double> target);
/// Accuracy, macro-F1 and, when probabilities are given, cross-entropy.
Metrics EvaluateClassification(
    std::span<const int> pred, std::span<const int> target,
    std::span<const std::vector<double>> probabilities = {});

nlohmann::json MetricsJson(const Metrics& m);

}  // namespace xastruct
