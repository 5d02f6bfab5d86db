#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ycontrol {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool dashed = false;
  bool markers = false;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  int width = 640;
  int height = 420;
};

// Line chart with axes, ticks and a legend. Non-finite points (and
// non-positive ones on log axes) are skipped. Output is deterministic.
void write_svg(std::ostream& out, const PlotSpec& spec,
               const std::vector<PlotSeries>& series);

}  // namespace ycontrol
