#pragma once

#include <span>
#include <string>
#include <vector>

namespace jointlti {

/// One line of a chart. Non-finite y values are skipped; err, when non-empty,
/// holds a symmetric error bar per point.
struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
};

/// Standalone SVG line chart. Each series becomes one <polyline> whose
/// points attribute lists exactly its plotted samples.
std::string render_svg(const PlotSpec& spec, std::span<const PlotSeries> series);

}  // namespace jointlti
