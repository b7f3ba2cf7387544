#include "jointlti/plot.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace jointlti {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 160.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                              "#9467bd", "#8c564b", "#e377c2", "#17becf"};

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

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  bool log = false;

  double transform(double v) const { return log ? std::log10(v) : v; }
  double fraction(double v) const { return (transform(v) - lo) / (hi - lo); }
};

Axis make_axis(const std::vector<double>& values, bool log) {
  Axis a;
  a.log = log;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : values) {
    if (!std::isfinite(v) || (log && v <= 0.0)) continue;
    lo = std::min(lo, a.transform(v));
    hi = std::max(hi, a.transform(v));
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  const double pad = 0.05 * (hi - lo);
  a.lo = lo - pad;
  a.hi = hi + pad;
  return a;
}

bool plottable(const Axis& a, double v) { return std::isfinite(v) && (!a.log || v > 0.0); }

}  // namespace

std::string render_svg(const PlotSpec& spec, std::span<const PlotSeries> series) {
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      ys.push_back(s.y[i]);
      if (i < s.err.size() && std::isfinite(s.err[i])) {
        ys.push_back(s.y[i] + s.err[i]);
        if (!spec.log_y || s.y[i] - s.err[i] > 0.0) ys.push_back(s.y[i] - s.err[i]);
      }
    }
  }
  const Axis ax = make_axis(xs, spec.log_x);
  const Axis ay = make_axis(ys, spec.log_y);
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + ax.fraction(x) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - ay.fraction(y)) * ph; };

  std::string svg = fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{3}</text>\n",
      kWidth, kHeight, kLeft + pw / 2, escape(spec.title));
  svg += fmt::format("<rect class=\"frame\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
                     kLeft, kTop, pw, ph);

  for (int i = 0; i <= 4; ++i) {
    const double fx = ax.lo + (ax.hi - ax.lo) * i / 4.0;
    const double fy = ay.lo + (ay.hi - ay.lo) * i / 4.0;
    const double vx = ax.log ? std::pow(10.0, fx) : fx;
    const double vy = ay.log ? std::pow(10.0, fy) : fy;
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.3g}</text>\n",
                       kLeft + pw * i / 4.0, kTop + ph + 16, vx);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.3g}</text>\n",
                       kLeft - 6, kTop + ph - ph * i / 4.0 + 4, vy);
  }
  svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
                     kLeft + pw / 2, kHeight - 16, escape(spec.x_label));
  svg += fmt::format("<text x=\"18\" y=\"{:.2f}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
                     "transform=\"rotate(-90 18 {:.2f})\">{}</text>\n",
                     kTop + ph / 2, kTop + ph / 2, escape(spec.y_label));

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* colour = kPalette[si % kPalette.size()];
    std::string points;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!plottable(ax, s.x[i]) || !plottable(ay, s.y[i])) continue;
      if (!points.empty()) points += ' ';
      points += fmt::format("{:.2f},{:.2f}", px(s.x[i]), py(s.y[i]));
      if (i < s.err.size() && std::isfinite(s.err[i]) && s.err[i] > 0.0) {
        const double lo = s.y[i] - s.err[i];
        const double y_lo = plottable(ay, lo) ? py(lo) : kTop + ph;
        svg += fmt::format("<line class=\"errorbar\" x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"{3}\"/>\n",
                           px(s.x[i]), py(s.y[i] + s.err[i]), y_lo, colour);
      }
    }
    svg += fmt::format("<polyline class=\"series\" data-label=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                       escape(s.label), colour, points);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{}\">{}</text>\n",
                       kLeft + pw + 10, kTop + 16 + 18.0 * static_cast<double>(si), colour, escape(s.label));
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace jointlti
