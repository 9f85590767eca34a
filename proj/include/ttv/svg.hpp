#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "ttv/labeling_types.hpp"

namespace ttv::svg {

// Small self-contained SVG emitters for the run reports. Nothing fancy:
// fixed canvas, linear scales, no external assets.

void write_confusion_heatmap(const std::string& path, const std::string& title,
                             const std::array<std::array<double, kNumBands>, kNumBands>& cells);

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;           // (x, y)
  std::vector<std::pair<double, double>> band;             // optional (lo, hi) per point
};

void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series);

struct ScatterGroup {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Includes the y = x diagonal for actual-vs-predicted reading.
void write_scatter(const std::string& path, const std::string& title, const std::string& x_label,
                   const std::string& y_label, const std::vector<ScatterGroup>& groups);

}  // namespace ttv::svg
