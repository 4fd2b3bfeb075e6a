#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "xmodal/harness.hpp"

namespace xmodal {

// Affine map from data values to pixel y; larger values map to smaller y
// (SVG y grows downward).
struct LinearYMap {
  double vmin = 0.0, vmax = 1.0;
  double y_top = 0.0, y_bottom = 1.0;
  double operator()(double v) const {
    if (vmax == vmin) return 0.5 * (y_top + y_bottom);
    return y_bottom + (v - vmin) / (vmax - vmin) * (y_top - y_bottom);
  }
};

// One aggregated line: median across seeds plus min-max band per x.
struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> median;
  std::vector<double> lo;
  std::vector<double> hi;
  bool has_band = false; // more than one seed contributed
};

struct PlotPanel {
  std::string title;
  std::string x_label = "epoch";
  std::string y_label; // metric name; rendered with a trailing "(↓)"
  std::vector<PlotSeries> series;
};

// Groups epochs of one series name by x; median/min/max across seeds.
PlotSeries aggregate_seeds(const std::string& label,
                           const std::vector<std::vector<double>>& per_seed);

std::string render_panel_svg(const PlotPanel& panel, int width = 640,
                             int height = 400);

// One panel per recorded series name; one line per axis-value combination,
// aggregated over seeds via the sweep manifest. Writes <series>.svg files
// plus warnings.json listing panels omitted for missing data. Returns the
// warning messages.
std::vector<std::string> emit_figures(const ResultsTable& table,
                                      const nlohmann::json& manifest,
                                      const std::string& out_dir);

} // namespace xmodal
