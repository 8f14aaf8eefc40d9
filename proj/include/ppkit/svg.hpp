#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "ppkit/geom.hpp"
#include "ppkit/io_util.hpp"
#include "ppkit/ripley.hpp"

namespace ppkit {

namespace detail {

inline std::string svg_num(double v) { return fmt_double(v, 8); }

struct PlotFrame {
  double width = 640, height = 480;
  double ml = 60, mr = 20, mt = 20, mb = 45;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;

  double px(double x) const {
    return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
  }
  double py(double y) const {
    return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
  }

  std::string polyline(const std::vector<double>& x,
                       const std::vector<double>& y,
                       const std::string& style) const {
    std::ostringstream s;
    s << "<polyline fill=\"none\" " << style << " points=\"";
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (i) s << ' ';
      s << svg_num(px(x[i])) << ',' << svg_num(py(y[i]));
    }
    s << "\"/>\n";
    return s.str();
  }

  std::string band(const std::vector<double>& x, const std::vector<double>& lo,
                   const std::vector<double>& hi,
                   const std::string& fill) const {
    std::ostringstream s;
    s << "<polygon stroke=\"none\" fill=\"" << fill << "\" points=\"";
    for (std::size_t i = 0; i < x.size(); ++i)
      s << svg_num(px(x[i])) << ',' << svg_num(py(lo[i])) << ' ';
    for (std::size_t i = x.size(); i-- > 0;)
      s << svg_num(px(x[i])) << ',' << svg_num(py(hi[i])) << ' ';
    s << "\"/>\n";
    return s.str();
  }

  std::string axes(const std::string& xlabel, const std::string& ylabel) const {
    std::ostringstream s;
    s << "<line stroke=\"black\" x1=\"" << svg_num(ml) << "\" y1=\""
      << svg_num(height - mb) << "\" x2=\"" << svg_num(width - mr)
      << "\" y2=\"" << svg_num(height - mb) << "\"/>\n";
    s << "<line stroke=\"black\" x1=\"" << svg_num(ml) << "\" y1=\""
      << svg_num(mt) << "\" x2=\"" << svg_num(ml) << "\" y2=\""
      << svg_num(height - mb) << "\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double x = xmin + (xmax - xmin) * k / 4.0;
      const double y = ymin + (ymax - ymin) * k / 4.0;
      s << "<text font-size=\"11\" text-anchor=\"middle\" x=\""
        << svg_num(px(x)) << "\" y=\"" << svg_num(height - mb + 16) << "\">"
        << fmt_double(x, 4) << "</text>\n";
      s << "<text font-size=\"11\" text-anchor=\"end\" x=\"" << svg_num(ml - 6)
        << "\" y=\"" << svg_num(py(y) + 4) << "\">" << fmt_double(y, 4)
        << "</text>\n";
    }
    s << "<text font-size=\"12\" text-anchor=\"middle\" x=\""
      << svg_num(0.5 * (ml + width - mr)) << "\" y=\""
      << svg_num(height - 8) << "\">" << xlabel << "</text>\n";
    s << "<text font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 "
      << svg_num(14) << ' ' << svg_num(0.5 * (mt + height - mb)) << ")\" x=\""
      << svg_num(14) << "\" y=\"" << svg_num(0.5 * (mt + height - mb)) << "\">"
      << ylabel << "</text>\n";
    return s.str();
  }
};

}  // namespace detail

// K-function plot: shaded envelope, dashed simulation mean, solid empirical.
inline std::string kresult_svg(const KResult& k, const std::string& title) {
  detail::PlotFrame f;
  f.xmin = k.r.front();
  f.xmax = k.r.back();
  double ymax = 1e-12;
  auto stretch = [&ymax](const std::vector<double>& v) {
    for (double x : v)
      if (std::isfinite(x)) ymax = std::max(ymax, x);
  };
  stretch(k.khat);
  stretch(k.hi);
  stretch(k.mean);
  f.ymin = 0.0;
  f.ymax = ymax * 1.05;

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width
    << "\" height=\"" << f.height << "\">\n";
  s << "<text font-size=\"13\" x=\"" << detail::svg_num(f.ml) << "\" y=\"14\">"
    << title << "</text>\n";
  if (!k.lo.empty()) s << f.band(k.r, k.lo, k.hi, "#c8d6e8");
  if (!k.mean.empty())
    s << f.polyline(k.r, k.mean,
                    "stroke=\"#555555\" stroke-dasharray=\"6,4\"");
  if (!k.khat.empty()) s << f.polyline(k.r, k.khat, "stroke=\"black\" stroke-width=\"1.5\"");
  s << f.axes("r (km)", "K(r)");
  s << "</svg>\n";
  return s.str();
}

// Correlation-curve plot with a 95% band.
inline std::string curve_band_svg(const std::vector<double>& r,
                                  const std::vector<double>& median,
                                  const std::vector<double>& lo,
                                  const std::vector<double>& hi,
                                  const std::string& title) {
  detail::PlotFrame f;
  f.xmin = r.front();
  f.xmax = r.back();
  f.ymin = *std::min_element(lo.begin(), lo.end());
  f.ymax = *std::max_element(hi.begin(), hi.end());
  if (f.ymin > 0.0) f.ymin = 0.0;
  if (f.ymax < 0.0) f.ymax = 0.0;
  const double pad = 0.05 * (f.ymax - f.ymin + 1e-12);
  f.ymin -= pad;
  f.ymax += pad;

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width
    << "\" height=\"" << f.height << "\">\n";
  s << "<text font-size=\"13\" x=\"" << detail::svg_num(f.ml) << "\" y=\"14\">"
    << title << "</text>\n";
  s << f.band(r, lo, hi, "#c8d6e8");
  if (f.ymin < 0.0 && f.ymax > 0.0) {
    std::vector<double> zero(r.size(), 0.0);
    s << f.polyline(r, zero, "stroke=\"#999999\" stroke-dasharray=\"2,3\"");
  }
  s << f.polyline(r, median, "stroke=\"black\" stroke-width=\"1.5\"");
  s << f.axes("h (km)", "correlation");
  s << "</svg>\n";
  return s.str();
}

// Field heatmap panel with overlaid points; used for the simulation lattice.
struct FieldPanel {
  std::string label;
  GridSpec grid;
  std::vector<double> values;
  std::vector<Vec2> points;
};

inline std::string field_panels_svg(const std::vector<FieldPanel>& panels,
                                    int ncols) {
  const double cell = 260, padding = 30;
  const int nrows = (static_cast<int>(panels.size()) + ncols - 1) / ncols;
  const double width = ncols * (cell + padding) + padding;
  const double height = nrows * (cell + padding) + padding;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
    << "\" height=\"" << height << "\">\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    const double ox = padding + (p % ncols) * (cell + padding);
    const double oy = padding + (p / ncols) * (cell + padding);
    double vmin = 0.0, vmax = 1.0;
    bool first = true;
    for (std::size_t c = 0; c < panel.values.size(); ++c) {
      if (!panel.grid.mask[c]) continue;
      const double v = panel.values[c];
      if (first || v < vmin) vmin = v;
      if (first || v > vmax) vmax = v;
      first = false;
    }
    if (vmax <= vmin) vmax = vmin + 1.0;
    const double sx = cell / (panel.grid.nx * panel.grid.dx);
    const double sy = cell / (panel.grid.ny * panel.grid.dy);
    for (int iy = 0; iy < panel.grid.ny; ++iy)
      for (int ix = 0; ix < panel.grid.nx; ++ix) {
        const std::size_t c =
            static_cast<std::size_t>(iy) * panel.grid.nx + ix;
        if (!panel.grid.mask[c]) continue;
        const double t = (panel.values[c] - vmin) / (vmax - vmin);
        const int shade = static_cast<int>(std::lround(255.0 * (1.0 - t)));
        s << "<rect x=\"" << detail::svg_num(ox + ix * panel.grid.dx * sx)
          << "\" y=\""
          << detail::svg_num(oy + cell - (iy + 1) * panel.grid.dy * sy)
          << "\" width=\"" << detail::svg_num(panel.grid.dx * sx + 0.5)
          << "\" height=\"" << detail::svg_num(panel.grid.dy * sy + 0.5)
          << "\" fill=\"rgb(255," << shade << ',' << shade << ")\"/>\n";
      }
    for (const Vec2& pt : panel.points)
      s << "<circle cx=\""
        << detail::svg_num(ox + (pt.x - panel.grid.x0) * sx) << "\" cy=\""
        << detail::svg_num(oy + cell - (pt.y - panel.grid.y0) * sy)
        << "\" r=\"2\" fill=\"black\"/>\n";
    s << "<rect fill=\"none\" stroke=\"black\" x=\"" << detail::svg_num(ox)
      << "\" y=\"" << detail::svg_num(oy) << "\" width=\""
      << detail::svg_num(cell) << "\" height=\"" << detail::svg_num(cell)
      << "\"/>\n";
    s << "<text font-size=\"12\" x=\"" << detail::svg_num(ox) << "\" y=\""
      << detail::svg_num(oy - 6) << "\">" << panel.label << " (n="
      << panel.points.size() << ")</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace ppkit
