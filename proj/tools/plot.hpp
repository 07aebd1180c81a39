#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace xastruct::cli {

/// A named column of a numeric CSV drawn against its first column.
struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Every y column of a CSV whose first column is the x axis. Labels are
/// "<file stem>:<column>".
std::vector<Series> ReadSeries(const std::filesystem::path& csv);

/// Line overlay with axes and a legend.
std::string OverlaySvg(const std::vector<Series>& series, const std::string& title);

/// Flattens report objects, arrays of them, or {"models": [...]} documents.
void CollectReports(const nlohmann::json& doc, std::vector<nlohmann::json>& out);

/// task,scope,n_train,n_val,mae,r2,accuracy,macro_f1,cross_entropy; one row
/// per report, sorted by (task, scope). Missing values stay blank.
std::string ErrorTableCsv(std::vector<nlohmann::json> reports);

}  // namespace xastruct::cli
