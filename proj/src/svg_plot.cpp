#include "ycontrol/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "ycontrol/csv.hpp"

namespace ycontrol {
namespace {

struct Axis {
  double lo = 0.0, hi = 1.0;
  bool log = false;

  double map(double v) const { return log ? std::log10(v) : v; }
  double frac(double v) const { return (map(v) - lo) / (hi - lo); }
};

bool usable(double v, bool log) { return std::isfinite(v) && (!log || v > 0.0); }

Axis fit_axis(const std::vector<PlotSeries>& series, bool use_x, bool log) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series) {
    const auto& v = use_x ? s.x : s.y;
    const auto& other = use_x ? s.y : s.x;
    for (std::size_t i = 0; i < v.size() && i < other.size(); ++i) {
      if (!usable(v[i], log)) continue;
      const double m = log ? std::log10(v[i]) : v[i];
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
  }
  if (!std::isfinite(lo)) return {0.0, 1.0, log};
  if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
    lo -= 0.5;
    hi += 0.5;
  } else if (!log) {
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  } else {
    lo = std::floor(lo * 10.0) / 10.0;
    hi = std::ceil(hi * 10.0) / 10.0;
  }
  return {lo, hi, log};
}

// Roughly five round tick values in mapped coordinates.
std::vector<double> ticks(const Axis& axis) {
  const double span = axis.hi - axis.lo;
  double step = std::pow(10.0, std::floor(std::log10(span / 5.0)));
  if (span / step > 10) step *= 2;
  if (span / step > 10) step *= 2.5;
  if (axis.log) step = std::max(step, span > 2.0 ? 1.0 : step);
  std::vector<double> out;
  for (double v = std::ceil(axis.lo / step) * step; v <= axis.hi + 1e-9 * step; v += step)
    out.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  return out;
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_svg(std::ostream& out, const PlotSpec& spec,
               const std::vector<PlotSeries>& series) {
  const double left = 70, right = 20, top = 36, bottom = 50;
  const double w = spec.width - left - right, h = spec.height - top - bottom;
  const Axis ax = fit_axis(series, true, spec.log_x);
  const Axis ay = fit_axis(series, false, spec.log_y);
  auto px = [&](double v) { return left + ax.frac(v) * w; };
  auto py = [&](double v) { return top + (1.0 - ay.frac(v)) * h; };
  auto num = [](double v) { return format_sig(v, 6); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width
      << "\" height=\"" << spec.height << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << spec.width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
      << escape(spec.title) << "</text>\n"
      << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << w << "\" height=\"" << h
      << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (double t : ticks(ax)) {
    const double x = left + (t - ax.lo) / (ax.hi - ax.lo) * w;
    const std::string label = ax.log ? "1e" + format_sig(t, 3) : format_sig(t, 4);
    out << "<line x1=\"" << num(x) << "\" y1=\"" << top + h << "\" x2=\"" << num(x)
        << "\" y2=\"" << top + h + 5 << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << num(x) << "\" y=\"" << top + h + 18
        << "\" text-anchor=\"middle\">" << label << "</text>\n";
  }
  for (double t : ticks(ay)) {
    const double y = top + (1.0 - (t - ay.lo) / (ay.hi - ay.lo)) * h;
    const std::string label = ay.log ? "1e" + format_sig(t, 3) : format_sig(t, 4);
    out << "<line x1=\"" << left - 5 << "\" y1=\"" << num(y) << "\" x2=\"" << left
        << "\" y2=\"" << num(y) << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << left - 8 << "\" y=\"" << num(y + 4)
        << "\" text-anchor=\"end\">" << label << "</text>\n";
  }
  out << "<text x=\"" << left + w / 2 << "\" y=\"" << spec.height - 12
      << "\" text-anchor=\"middle\">" << escape(spec.x_label) << "</text>\n"
      << "<text x=\"16\" y=\"" << top + h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << top + h / 2 << ")\">" << escape(spec.y_label) << "</text>\n";

  int legend_row = 0;
  for (const auto& s : series) {
    std::string points;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!usable(s.x[i], ax.log) || !usable(s.y[i], ay.log)) continue;
      points += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
    }
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
        << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"" << points << "\"/>\n";
    if (s.markers) {
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
        if (!usable(s.x[i], ax.log) || !usable(s.y[i], ay.log)) continue;
        out << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i]))
            << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
      }
    }
    if (!s.label.empty()) {
      const double ly = top + 14 + 14 * legend_row++;
      out << "<line x1=\"" << left + w - 150 << "\" y1=\"" << ly - 4 << "\" x2=\""
          << left + w - 130 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << s.color << "\""
          << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n"
          << "<text x=\"" << left + w - 125 << "\" y=\"" << ly << "\">" << escape(s.label)
          << "</text>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace ycontrol
