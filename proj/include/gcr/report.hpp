#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gcr/common.hpp"
#include "gcr/experiment.hpp"
#include "gcr/metrics.hpp"

namespace gcr {

// metrics.csv: one row per record, fixed column order.
inline std::string metrics_csv(const std::vector<RunRecord>& records, double threshold,
                               int window) {
  std::ostringstream os;
  os << "env,mode,seed,auc,steps_to_thr,final_return\n";
  for (const RunRecord& r : records) {
    const long n = r.eval_steps.empty() ? 0 : r.eval_steps.back();
    os << r.env << "," << r.mode << "," << r.seed << "," << detail::fmt_double(auc_at_n(r, n, window))
       << "," << steps_to_threshold(r, threshold, n, window) << ","
       << detail::fmt_double(final_return(r)) << "\n";
  }
  return os.str();
}

// curves.csv: the raw learning curves, one row per checkpoint.
inline std::string curves_csv(const std::vector<RunRecord>& records) {
  std::ostringstream os;
  os << "env,mode,seed,step,return\n";
  for (const RunRecord& r : records)
    for (std::size_t i = 0; i < r.eval_steps.size(); ++i)
      os << r.env << "," << r.mode << "," << r.seed << "," << r.eval_steps[i] << ","
         << detail::fmt_double(r.eval_returns[i]) << "\n";
  return os.str();
}

// Minimal SVG line chart: one polyline per (env, mode) mean curve, plus axes.
inline std::string curves_svg(const std::vector<RunRecord>& records) {
  const int width = 720, height = 440, margin = 50;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\">\n";
  if (records.empty()) {
    os << "</svg>\n";
    return os.str();
  }
  // group by (env, mode) and average aligned checkpoints
  std::map<std::pair<std::string, std::string>, std::vector<const RunRecord*>> groups;
  for (const RunRecord& r : records) groups[{r.env, r.mode}].push_back(&r);
  double xmax = 1.0, ymin = 1e300, ymax = -1e300;
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>>
      curves;
  for (const auto& [key, rs] : groups) {
    const std::size_t n = rs.front()->eval_steps.size();
    std::vector<double> xs(n, 0.0), ys(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = static_cast<double>(rs.front()->eval_steps[i]);
      double m = 0.0;
      int cnt = 0;
      for (const RunRecord* r : rs) {
        if (i < r->eval_returns.size()) {
          m += r->eval_returns[i];
          ++cnt;
        }
      }
      ys[i] = cnt ? m / cnt : 0.0;
      xmax = std::max(xmax, xs[i]);
      ymin = std::min(ymin, ys[i]);
      ymax = std::max(ymax, ys[i]);
    }
    curves[key] = {xs, ys};
  }
  if (ymin >= ymax) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  const auto px = [&](double x) { return margin + x / xmax * (width - 2 * margin); };
  const auto py = [&](double y) {
    return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin);
  };
  os << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
     << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
     << height - margin << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"" << height - 12 << "\">env steps</text>\n";
  os << "<text x=\"8\" y=\"" << margin - 8 << "\">return</text>\n";
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  int color = 0;
  int legend_y = margin;
  for (const auto& [key, xy] : curves) {
    const char* stroke = palette[color % 6];
    os << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xy.first.size(); ++i)
      os << px(xy.first[i]) << "," << py(xy.second[i]) << " ";
    os << "\"/>\n";
    os << "<text x=\"" << width - margin - 160 << "\" y=\"" << legend_y << "\" fill=\"" << stroke
       << "\">" << key.first << "/" << key.second << "</text>\n";
    legend_y += 16;
    ++color;
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write '" + path + "'");
  out << content;
}

}  // namespace gcr
