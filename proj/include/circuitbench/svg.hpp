#pragma once

#include <optional>
#include <string>
#include <vector>

#include "circuitbench/patching.hpp"

namespace circuitbench::svg {

struct RenderOptions {
  /// Omit the generation-time comment so reruns are byte-identical.
  bool deterministic = false;
};

struct HeatmapSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> row_labels;  // defaults to 0..rows-1
  std::vector<std::string> col_labels;  // defaults to 0..cols-1
  double annotate_min = 0.1;            // annotate cells with |value| >= this
  std::optional<double> scale;          // colour saturates at ±scale; default max |value|
};

/// Diverging blue-white-red heatmap centred at 0 over a row-major grid.
std::string heatmap(std::size_t rows, std::size_t cols, const std::vector<double>& values,
                    const HeatmapSpec& spec, const RenderOptions& options = {});
std::string heatmap(const SweepGrid& grid, const HeatmapSpec& spec, const RenderOptions& options = {});

/// Colour for v on the diverging palette with saturation at ±scale.
std::string diverging_color(double v, double scale);

struct Series {
  std::string label;
  std::vector<double> x, y;
  bool dashed = false;
};

struct HLine {
  double y = 0;
  std::string label;
};

struct Marker {
  double x = 0, y = 0;
  std::string label;
};

struct CurvesSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;  // requires every x > 0
  std::optional<double> y_min, y_max;
  std::vector<HLine> hlines;
  std::vector<Marker> markers;
};

/// Line chart with a legend. Throws ConfigError for no series or an empty
/// series, ShapeError for mismatched x/y.
std::string curves(const std::vector<Series>& series, const CurvesSpec& spec,
                   const RenderOptions& options = {});

struct BarsSpec {
  std::string title;
  std::string y_label;
  std::vector<std::string> categories;  // x-axis groups
  std::vector<std::string> groups;      // bars within a category (legend)
};

/// Grouped bar chart; values[category][group].
std::string bars(const std::vector<std::vector<double>>& values, const BarsSpec& spec,
                 const RenderOptions& options = {});

/// Escapes &, <, >, " and ' for text and attribute content.
std::string escape(const std::string& s);

}  // namespace circuitbench::svg
