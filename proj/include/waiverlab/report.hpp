#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "waiverlab/metrics.hpp"

namespace waiverlab {

// Column order of waiver_report.csv. Undefined values are written as "NA";
// flags are '|'-joined names; intervened is 0/1.
inline constexpr const char* kReportCsvHeader =
    "layer,head,position,sink_score,v_l1,v_l2,l1_over_l2,flags,intervened";

void write_report_csv(const WaiverReport& report, std::ostream& out);

struct PlotPoint {
  double x = 0.0;
  double y = 0.0;
};

struct PlotSeries {
  std::string label;
  std::string color;  // any SVG color
  std::vector<PlotPoint> points;
  bool connect = false;  // draw a polyline through the points
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
};

// Self-contained SVG document. Output depends only on the plot contents.
std::string render_svg(const Plot& plot);

// x = key position, y = weight from `query_row`; intervened keys get their
// own series so the legend names them.
Plot attention_scatter_plot(const Tensor& weights, std::size_t query_row, const std::vector<std::size_t>& intervened,
                            const std::string& title);

// Per-position L2 norm profile with highlighted positions as a separate series.
Plot norm_profile_plot(const std::vector<double>& norms, const std::vector<std::size_t>& highlight,
                       const std::string& title, const std::string& y_label);

// Per-dimension values of one hidden-state row.
Plot hidden_dims_plot(const Tensor& hidden, std::size_t position, const std::string& title);

}  // namespace waiverlab
