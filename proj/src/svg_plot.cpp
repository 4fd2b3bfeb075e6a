#include "xmodal/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace xmodal {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                          "#9467bd", "#ff7f0e", "#8c564b"};
constexpr int kPaletteSize = 6;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

double median_sorted(std::vector<double> vals) {
  std::sort(vals.begin(), vals.end());
  size_t n = vals.size();
  return n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

} // namespace

PlotSeries aggregate_seeds(const std::string& label,
                           const std::vector<std::vector<double>>& per_seed) {
  PlotSeries s;
  s.label = label;
  size_t len = 0;
  for (const auto& v : per_seed) len = std::max(len, v.size());
  for (size_t i = 0; i < len; ++i) {
    std::vector<double> vals;
    for (const auto& v : per_seed)
      if (i < v.size()) vals.push_back(v[i]);
    if (vals.empty()) continue;
    s.x.push_back(static_cast<double>(i));
    s.median.push_back(median_sorted(vals));
    s.lo.push_back(*std::min_element(vals.begin(), vals.end()));
    s.hi.push_back(*std::max_element(vals.begin(), vals.end()));
    if (vals.size() > 1) s.has_band = true;
  }
  return s;
}

std::string render_panel_svg(const PlotPanel& panel, int width, int height) {
  const double ml = 60, mr = 16, mt = 32, mb = 44;
  const double px0 = ml, px1 = width - mr;
  const double py_top = mt, py_bottom = height - mb;

  double vmin = 0.0, vmax = 1.0, xmin = 0.0, xmax = 1.0;
  bool first = true;
  for (const auto& s : panel.series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        vmin = s.lo[i];
        vmax = s.hi[i];
        xmin = xmax = s.x[i];
        first = false;
      }
      vmin = std::min(vmin, s.lo[i]);
      vmax = std::max(vmax, s.hi[i]);
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
    }
  if (vmax == vmin) vmax = vmin + 1.0;
  if (xmax == xmin) xmax = xmin + 1.0;

  LinearYMap ymap{vmin, vmax, py_top, py_bottom};
  auto xmap = [&](double x) {
    return px0 + (x - xmin) / (xmax - xmin) * (px1 - px0);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
     << height << "\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height
     << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"14\">"
     << xml_escape(panel.title) << "</text>\n";
  // axes
  os << "<line x1=\"" << fmt(px0) << "\" y1=\"" << fmt(py_bottom) << "\" x2=\""
     << fmt(px1) << "\" y2=\"" << fmt(py_bottom)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << fmt(px0) << "\" y1=\"" << fmt(py_top) << "\" x2=\""
     << fmt(px0) << "\" y2=\"" << fmt(py_bottom) << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (px0 + px1) / 2 << "\" y=\"" << height - 10
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"12\">"
     << xml_escape(panel.x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << (py_top + py_bottom) / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        "transform=\"rotate(-90 16 "
     << (py_top + py_bottom) / 2 << ")\">" << xml_escape(panel.y_label)
     << " (&#x2193;)</text>\n";
  // extremal tick labels
  os << "<text x=\"" << fmt(px0 - 6) << "\" y=\"" << fmt(py_bottom + 4)
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
     << fmt(vmin) << "</text>\n";
  os << "<text x=\"" << fmt(px0 - 6) << "\" y=\"" << fmt(py_top + 4)
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
     << fmt(vmax) << "</text>\n";

  for (size_t si = 0; si < panel.series.size(); ++si) {
    const PlotSeries& s = panel.series[si];
    const char* color = kPalette[si % kPaletteSize];
    if (s.has_band && !s.x.empty()) {
      os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" "
            "stroke=\"none\" points=\"";
      for (size_t i = 0; i < s.x.size(); ++i)
        os << fmt(xmap(s.x[i])) << "," << fmt(ymap(s.hi[i])) << " ";
      for (size_t i = s.x.size(); i-- > 0;)
        os << fmt(xmap(s.x[i])) << "," << fmt(ymap(s.lo[i]))
           << (i ? " " : "");
      os << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i)
      os << fmt(xmap(s.x[i])) << "," << fmt(ymap(s.median[i]))
         << (i + 1 < s.x.size() ? " " : "");
    os << "\"/>\n";
    // legend entry
    double ly = py_top + 14.0 * (si + 1);
    os << "<line x1=\"" << fmt(px1 - 110) << "\" y1=\"" << fmt(ly)
       << "\" x2=\"" << fmt(px1 - 92) << "\" y2=\"" << fmt(ly)
       << "\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
    os << "<text x=\"" << fmt(px1 - 88) << "\" y=\"" << fmt(ly + 4)
       << "\" font-family=\"sans-serif\" font-size=\"10\">"
       << xml_escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::string> emit_figures(const ResultsTable& table,
                                      const nlohmann::json& manifest,
                                      const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::string> warnings;

  // run_id -> (axis-combo label, metric name)
  std::map<std::string, std::string> combo_of, metric_of;
  if (manifest.contains("runs")) {
    for (auto it = manifest.at("runs").begin(); it != manifest.at("runs").end();
         ++it) {
      std::string label;
      for (auto ax = it.value().at("axes").begin();
           ax != it.value().at("axes").end(); ++ax) {
        if (!label.empty()) label += ", ";
        label += ax.key() + "=" + ax.value().get<std::string>();
      }
      if (label.empty()) label = "run";
      combo_of[it.key()] = label;
      metric_of[it.key()] = it.value().value("metric", "");
    }
  }

  // series name -> combo label -> per-run value-by-epoch
  std::map<std::string, std::map<std::string,
                                 std::map<std::string, std::map<int64_t, double>>>>
      grouped;
  for (const ResultRow& r : table.rows) {
    auto it = combo_of.find(r.run_id);
    std::string combo = it != combo_of.end() ? it->second : r.run_id;
    grouped[r.series][combo][r.run_id][r.epoch] = r.value;
  }

  const char* kExpected[] = {"stage2_otdd", "train_loss", "val_metric",
                             "test_metric"};
  for (const char* name : kExpected)
    if (!grouped.count(name))
      warnings.push_back(std::string("panel '") + name +
                         "' omitted: no recorded data");

  for (const auto& [series_name, combos] : grouped) {
    PlotPanel panel;
    panel.title = series_name;
    if (series_name == "stage2_otdd") {
      panel.y_label = "OTDD";
    } else if (series_name == "train_loss") {
      panel.y_label = "training loss";
    } else {
      std::string metric;
      for (const auto& [combo, runs] : combos)
        for (const auto& [run_id, pts] : runs)
          if (metric.empty() && metric_of.count(run_id))
            metric = metric_of[run_id];
      panel.y_label = metric.empty() ? series_name : metric;
    }
    for (const auto& [combo, runs] : combos) {
      std::set<int64_t> epochs;
      for (const auto& [run_id, pts] : runs)
        for (const auto& [e, v] : pts) epochs.insert(e);
      PlotSeries s;
      s.label = combo;
      for (int64_t e : epochs) {
        std::vector<double> vals;
        for (const auto& [run_id, pts] : runs) {
          auto pit = pts.find(e);
          if (pit != pts.end()) vals.push_back(pit->second);
        }
        if (vals.empty()) continue;
        s.x.push_back(static_cast<double>(e));
        s.median.push_back(median_sorted(vals));
        s.lo.push_back(*std::min_element(vals.begin(), vals.end()));
        s.hi.push_back(*std::max_element(vals.begin(), vals.end()));
        if (vals.size() > 1) s.has_band = true;
      }
      panel.series.push_back(std::move(s));
    }
    std::ofstream out(out_dir + "/fig-" + series_name + ".svg");
    out << render_panel_svg(panel);
  }

  {
    std::ofstream wf(out_dir + "/warnings.json");
    wf << nlohmann::json(warnings).dump(2) << "\n";
  }
  return warnings;
}

} // namespace xmodal
