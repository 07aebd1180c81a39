#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "xastruct/dataset_io.hpp"
#include "xastruct/error.hpp"

namespace xastruct::cli {
namespace {

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

double ParseNumber(const std::string& text, const std::filesystem::path& file) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kParse, file.string() + ": not a number: '" + text + "'");
}

std::string Fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string Tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string Escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string Cell(const nlohmann::json& report, const char* key) {
  if (!report.contains(key) || report[key].is_null()) return "";
  const auto& v = report[key];
  if (v.is_number_float()) return io::FormatDouble(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace

std::vector<Series> ReadSeries(const std::filesystem::path& csv) {
  std::stringstream text(io::ReadText(csv));
  std::string line;
  if (!std::getline(text, line)) throw Error(ErrorCode::kParse, csv.string() + ": empty");
  const auto header = SplitCsvLine(line);
  if (header.size() < 2) {
    throw Error(ErrorCode::kParse, csv.string() + ": need at least two columns");
  }
  std::vector<Series> series;
  for (std::size_t c = 1; c < header.size(); ++c) {
    series.push_back({csv.stem().string() + ":" + header[c], {}, {}});
  }
  while (std::getline(text, line)) {
    if (line.empty()) continue;
    const auto cells = SplitCsvLine(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::kParse, csv.string() + ": ragged row");
    }
    const double x = ParseNumber(cells[0], csv);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      series[c - 1].x.push_back(x);
      series[c - 1].y.push_back(ParseNumber(cells[c], csv));
    }
  }
  return series;
}

std::string OverlaySvg(const std::vector<Series>& series, const std::string& title) {
  constexpr double kWidth = 640, kHeight = 400;
  constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) y1 = y0 + 1;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << Fixed(kLeft) << "\" y=\"22\" font-size=\"14\">" << Escape(title)
      << "</text>\n";
  svg << "<rect x=\"" << Fixed(kLeft) << "\" y=\"" << Fixed(kTop) << "\" width=\"" << Fixed(pw)
      << "\" height=\"" << Fixed(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
    svg << "<text x=\"" << Fixed(px(xv)) << "\" y=\"" << Fixed(kTop + ph + 16)
        << "\" text-anchor=\"middle\">" << Tick(xv) << "</text>\n";
    svg << "<text x=\"" << Fixed(kLeft - 6) << "\" y=\"" << Fixed(py(yv) + 4)
        << "\" text-anchor=\"end\">" << Tick(yv) << "</text>\n";
  }
  svg << "<text x=\"" << Fixed(kLeft + pw / 2) << "\" y=\"" << Fixed(kHeight - 10)
      << "\" text-anchor=\"middle\">energy (eV)</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < series[i].x.size(); ++k) {
      if (k) svg << ' ';
      svg << Fixed(px(series[i].x[k])) << ',' << Fixed(py(series[i].y[k]));
    }
    svg << "\"/>\n";
    const double ly = kTop + 14.0 * static_cast<double>(i) + 6;
    svg << "<line x1=\"" << Fixed(kLeft + pw + 10) << "\" y1=\"" << Fixed(ly) << "\" x2=\""
        << Fixed(kLeft + pw + 30) << "\" y2=\"" << Fixed(ly) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << Fixed(kLeft + pw + 34) << "\" y=\"" << Fixed(ly + 4) << "\">"
        << Escape(series[i].label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void CollectReports(const nlohmann::json& doc, std::vector<nlohmann::json>& out) {
  if (doc.is_array()) {
    for (const auto& item : doc) CollectReports(item, out);
  } else if (doc.is_object() && doc.contains("models")) {
    CollectReports(doc["models"], out);
  } else if (doc.is_object() && doc.contains("task") && doc.contains("scope")) {
    out.push_back(doc);
  } else {
    throw Error(ErrorCode::kParse, "not a metrics report");
  }
}

std::string ErrorTableCsv(std::vector<nlohmann::json> reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
    return std::tie(a["task"], a["scope"]) < std::tie(b["task"], b["scope"]);
  });
  static const char* kColumns[] = {"task", "scope", "n_train", "n_val", "mae",
                                   "r2", "accuracy", "macro_f1", "cross_entropy"};
  std::string csv;
  for (std::size_t c = 0; c < std::size(kColumns); ++c) {
    csv += (c ? "," : "") + std::string(kColumns[c]);
  }
  csv += '\n';
  for (const auto& r : reports) {
    for (std::size_t c = 0; c < std::size(kColumns); ++c) {
      csv += (c ? "," : "") + Cell(r, kColumns[c]);
    }
    csv += '\n';
  }
  return csv;
}

}  // namespace xastruct::cli
