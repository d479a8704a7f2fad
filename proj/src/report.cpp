#include "waiverlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "waiverlab/error.hpp"

namespace waiverlab {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string coord(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_report_csv(const WaiverReport& report, std::ostream& out) {
  out << kReportCsvHeader << "\n";
  for (const auto& r : report.rows) {
    out << r.layer << ',' << r.head << ',' << r.position << ',' << (r.sink ? num(*r.sink) : "NA") << ','
        << num(r.v_l1) << ',' << num(r.v_l2) << ',' << (r.l1_over_l2 ? num(*r.l1_over_l2) : "NA") << ','
        << flags_to_string(r.flags) << ',' << (r.intervened ? 1 : 0) << "\n";
  }
}

std::string render_svg(const Plot& plot) {
  constexpr double width = 720, height = 420;
  constexpr double left = 70, right = 180, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : plot.series) {
    for (const auto& p : s.points) {
      if (first) {
        xmin = xmax = p.x;
        ymin = ymax = p.y;
        first = false;
      }
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  }
  ymin = std::min(ymin, 0.0);
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  if (ymax - ymin < 1e-12) ymax = ymin + 1;
  const auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  const auto sy = [&](double y) { return top + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << coord(left + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << escape(plot.title) << "</text>\n";
  o << "<rect x=\"" << coord(left) << "\" y=\"" << coord(top) << "\" width=\"" << coord(pw) << "\" height=\""
    << coord(ph) << "\" fill=\"none\" stroke=\"#444\"/>\n";

  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + (xmax - xmin) * t / 4.0;
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    o << "<text x=\"" << coord(sx(xv)) << "\" y=\"" << coord(top + ph + 16) << "\" text-anchor=\"middle\">"
      << num(std::round(xv * 1000) / 1000) << "</text>\n";
    o << "<text x=\"" << coord(left - 6) << "\" y=\"" << coord(sy(yv) + 4) << "\" text-anchor=\"end\">"
      << num(std::round(yv * 10000) / 10000) << "</text>\n";
  }
  o << "<text x=\"" << coord(left + pw / 2) << "\" y=\"" << coord(height - 10) << "\" text-anchor=\"middle\">"
    << escape(plot.x_label) << "</text>\n";
  o << "<text transform=\"translate(16," << coord(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(plot.y_label) << "</text>\n";

  for (std::size_t si = 0; si < plot.series.size(); ++si) {
    const auto& s = plot.series[si];
    o << "<g class=\"series\" data-label=\"" << escape(s.label) << "\">\n";
    if (s.connect && s.points.size() > 1) {
      o << "<polyline fill=\"none\" stroke=\"" << escape(s.color) << "\" stroke-width=\"1\" points=\"";
      for (const auto& p : s.points) o << coord(sx(p.x)) << ',' << coord(sy(p.y)) << ' ';
      o << "\"/>\n";
    }
    for (const auto& p : s.points) {
      o << "<circle cx=\"" << coord(sx(p.x)) << "\" cy=\"" << coord(sy(p.y)) << "\" r=\"3\" fill=\""
        << escape(s.color) << "\"/>\n";
    }
    o << "</g>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(si);
    o << "<circle cx=\"" << coord(left + pw + 16) << "\" cy=\"" << coord(ly - 4) << "\" r=\"4\" fill=\""
      << escape(s.color) << "\"/>\n";
    o << "<text class=\"legend\" x=\"" << coord(left + pw + 26) << "\" y=\"" << coord(ly) << "\">" << escape(s.label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

Plot attention_scatter_plot(const Tensor& weights, std::size_t query_row, const std::vector<std::size_t>& intervened,
                            const std::string& title) {
  if (weights.rank() != 2 || query_row >= weights.rows()) {
    throw IndexError("attention scatter: query row " + std::to_string(query_row) + " outside weights " +
                     shape_to_string(weights.shape()));
  }
  Plot plot{title, "key position", "attention weight from query " + std::to_string(query_row), {}};
  PlotSeries base{"keys", "#1f77b4", {}, false};
  std::vector<PlotSeries> marked;
  for (std::size_t j = 0; j < weights.cols(); ++j) {
    const PlotPoint p{static_cast<double>(j), weights.at(query_row, j)};
    if (std::find(intervened.begin(), intervened.end(), j) != intervened.end()) {
      marked.push_back({"intervened: " + std::to_string(j), "#d62728", {p}, false});
    } else {
      base.points.push_back(p);
    }
  }
  plot.series.push_back(std::move(base));
  for (auto& s : marked) plot.series.push_back(std::move(s));
  return plot;
}

Plot norm_profile_plot(const std::vector<double>& norms, const std::vector<std::size_t>& highlight,
                       const std::string& title, const std::string& y_label) {
  Plot plot{title, "position", y_label, {}};
  PlotSeries base{"positions", "#1f77b4", {}, true};
  std::vector<PlotSeries> marked;
  for (std::size_t i = 0; i < norms.size(); ++i) {
    const PlotPoint p{static_cast<double>(i), norms[i]};
    base.points.push_back(p);
    if (std::find(highlight.begin(), highlight.end(), i) != highlight.end()) {
      marked.push_back({"intervened: " + std::to_string(i), "#d62728", {p}, false});
    }
  }
  plot.series.push_back(std::move(base));
  for (auto& s : marked) plot.series.push_back(std::move(s));
  return plot;
}

Plot hidden_dims_plot(const Tensor& hidden, std::size_t position, const std::string& title) {
  if (hidden.rank() != 2 || position >= hidden.rows()) {
    throw IndexError("hidden plot: position " + std::to_string(position) + " outside " +
                     shape_to_string(hidden.shape()));
  }
  Plot plot{title, "dimension", "value", {}};
  PlotSeries s{"position " + std::to_string(position), "#2ca02c", {}, true};
  auto row = hidden.row(position);
  for (std::size_t d = 0; d < row.size(); ++d) s.points.push_back({static_cast<double>(d), row[d]});
  plot.series.push_back(std::move(s));
  return plot;
}

}  // namespace waiverlab
