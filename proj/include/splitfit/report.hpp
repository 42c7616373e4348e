// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "splitfit/simulate.hpp"

namespace splitfit {

// "71.73 (-10.71)": validation accuracy in percent with the signed delta from
// the reference (teacher) model in brackets.
inline std::string format_accuracy_cell(double top1_pct, double reference_pct) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f (%+.2f)", top1_pct, top1_pct - reference_pct);
  return buf;
}

struct AccuracyEntry {
  std::string name;     // run / recipe label
  std::string model;    // base model the run distilled from
  double top1 = 0;      // fraction in [0,1]
  bool is_reference = false;
};

// Fixed-width text table, one row per entry, deltas against the reference
// entry of the same base model.
inline std::string render_accuracy_table(const std::vector<AccuracyEntry>& entries) {
  std::map<std::string, double> reference;
  for (const auto& e : entries)
    if (e.is_reference) reference[e.model] = e.top1 * 100.0;
  size_t name_w = 4;
  for (const auto& e : entries) name_w = std::max(name_w, e.name.size());
  std::string out = "| ";
  out += "name";
  out.append(name_w - 4, ' ');
  out += " | top1 [%]        |\n|-";
  out.append(name_w, '-');
  out += "-|-----------------|\n";
  for (const auto& e : entries) {
    const double pct = e.top1 * 100.0;
    auto ref = reference.find(e.model);
    std::string cell;
    if (e.is_reference) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f", pct);
      cell = buf;
    } else if (ref != reference.end()) {
      cell = format_accuracy_cell(pct, ref->second);
    } else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f (n/a)", pct);
      cell = buf;
    }
    out += "| " + e.name;
    out.append(name_w - e.name.size(), ' ');
    out += " | " + cell;
    if (cell.size() < 15) out.append(15 - cell.size(), ' ');
    out += " |\n";
  }
  return out;
}

// --- minimal SVG line charts --------------------------------------------------

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

// Self-contained SVG polyline chart; enough for payload-vs-accuracy and
// delay-vs-rate curves without pulling in a plotting stack.
inline void write_svg_chart(const std::string& path, const std::string& title,
                            const std::string& xlabel, const std::string& ylabel,
                            std::vector<PlotSeries> series, bool log_x = false) {
  if (series.empty()) throw Error("nothing to plot");
  const int W = 640, H = 420, ml = 70, mr = 160, mt = 40, mb = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (auto& s : series) {
    std::sort(s.points.begin(), s.points.end());
    for (auto& [x, y] : s.points) {
      double xv = log_x ? std::log10(std::max(x, 1e-300)) : x;
      xmin = std::min(xmin, xv);
      xmax = std::max(xmax, xv);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;
  auto px = [&](double x) {
    double xv = log_x ? std::log10(std::max(x, 1e-300)) : x;
    return ml + (xv - xmin) / (xmax - xmin) * (W - ml - mr);
  };
  auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  f << "<rect width='100%' height='100%' fill='white'/>\n";
  f << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title
    << "</text>\n";
  f << "<text x='" << (ml + (W - ml - mr) / 2) << "' y='" << H - 12
    << "' text-anchor='middle' font-size='12'>" << xlabel << (log_x ? " (log scale)" : "")
    << "</text>\n";
  f << "<text x='16' y='" << (mt + (H - mt - mb) / 2)
    << "' text-anchor='middle' font-size='12' transform='rotate(-90 16 "
    << (mt + (H - mt - mb) / 2) << ")'>" << ylabel << "</text>\n";
  f << "<rect x='" << ml << "' y='" << mt << "' width='" << (W - ml - mr) << "' height='"
    << (H - mt - mb) << "' fill='none' stroke='#333'/>\n";
  // axis ticks
  for (int i = 0; i <= 4; ++i) {
    double xv = xmin + (xmax - xmin) * i / 4;
    double yv = ymin + (ymax - ymin) * i / 4;
    double xq = log_x ? std::pow(10.0, xv) : xv;
    char bx[32], by[32];
    std::snprintf(bx, sizeof(bx), "%.3g", xq);
    std::snprintf(by, sizeof(by), "%.3g", yv);
    f << "<text x='" << (ml + (W - ml - mr) * i / 4) << "' y='" << H - mb + 16
      << "' text-anchor='middle' font-size='10'>" << bx << "</text>\n";
    f << "<text x='" << ml - 6 << "' y='" << py(yv) + 3
      << "' text-anchor='end' font-size='10'>" << by << "</text>\n";
  }
  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = colors[si % 8];
    f << "<polyline fill='none' stroke='" << color << "' stroke-width='1.8' points='";
    for (auto& [x, y] : series[si].points) f << px(x) << "," << py(y) << " ";
    f << "'/>\n";
    for (auto& [x, y] : series[si].points)
      f << "<circle cx='" << px(x) << "' cy='" << py(y) << "' r='2.6' fill='" << color << "'/>\n";
    f << "<text x='" << W - mr + 10 << "' y='" << mt + 16 + 16 * static_cast<int>(si)
      << "' font-size='11' fill='" << color << "'>" << series[si].label << "</text>\n";
  }
  f << "</svg>\n";
}

// Curve extraction from sweep rows.
inline std::vector<PlotSeries> payload_vs_accuracy_series(const std::vector<SweepRow>& rows) {
  std::map<std::string, PlotSeries> by_model;
  for (const auto& r : rows) {
    if (r.strategy != Strategy::split) continue;
    auto& s = by_model[r.model_name];
    s.label = r.model_name;
    s.points.emplace_back(static_cast<double>(r.payload_bytes), r.top1 * 100.0);
  }
  std::vector<PlotSeries> out;
  for (auto& [k, v] : by_model) out.push_back(std::move(v));
  return out;
}

inline std::vector<PlotSeries> delay_vs_rate_series(const std::vector<SweepRow>& rows) {
  std::map<std::string, PlotSeries> by_key;
  for (const auto& r : rows) {
    if (r.channel_rate_bps <= 0) continue;  // traces have no single rate
    std::string key = r.model_name + "/" + strategy_name(r.strategy);
    auto& s = by_key[key];
    s.label = key;
    s.points.emplace_back(r.channel_rate_bps, r.d_e2e_s);
  }
  std::vector<PlotSeries> out;
  for (auto& [k, v] : by_key) out.push_back(std::move(v));
  return out;
}

}  // namespace splitfit
