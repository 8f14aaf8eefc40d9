#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppkit/random.hpp"

namespace ppkit {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(const Vec2& a, const Vec2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

namespace detail {

// Signed shoelace area; positive for counterclockwise rings.
inline double signed_ring_area(const std::vector<Vec2>& ring) {
  double a = 0.0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i)
    a += ring[i].x * ring[i + 1].y - ring[i + 1].x * ring[i].y;
  return 0.5 * a;
}

inline double point_segment_dist(const Vec2& p, const Vec2& a, const Vec2& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = p.x - a.x, wy = p.y - a.y;
  const double vv = vx * vx + vy * vy;
  double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

}  // namespace detail

// Observation window: closed polygon rings in planar km, first ring outer,
// remaining rings holes. Self-intersection is not detected (precondition).
struct Window {
  std::vector<std::vector<Vec2>> rings;
  double area = 0.0;

  static Window from_rings(std::vector<std::vector<Vec2>> rings) {
    if (rings.empty()) throw std::invalid_argument("Window: no rings");
    for (const auto& ring : rings) {
      if (ring.size() < 4)
        throw std::invalid_argument("Window: ring needs >= 4 vertices");
      const Vec2 a = ring.front(), b = ring.back();
      if (a.x != b.x || a.y != b.y)
        throw std::invalid_argument("Window: ring not closed");
    }
    Window w;
    w.rings = std::move(rings);
    double area = std::abs(detail::signed_ring_area(w.rings[0]));
    for (std::size_t i = 1; i < w.rings.size(); ++i)
      area -= std::abs(detail::signed_ring_area(w.rings[i]));
    if (!(area > 0.0)) throw std::invalid_argument("Window: area must be > 0");
    w.area = area;
    return w;
  }

  static Window rect(double x0, double y0, double x1, double y1) {
    return from_rings({{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}}});
  }

  // Even-odd membership over all rings; boundary counts as inside.
  bool contains(const Vec2& p) const {
    constexpr double kEdgeTol = 1e-9;  // km
    bool odd = false;
    for (const auto& ring : rings) {
      for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        const Vec2& a = ring[i];
        const Vec2& b = ring[i + 1];
        if (detail::point_segment_dist(p, a, b) <= kEdgeTol) return true;
        if ((a.y > p.y) != (b.y > p.y)) {
          const double xcross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
          if (p.x < xcross) odd = !odd;
        }
      }
    }
    return odd;
  }

  double boundary_distance(const Vec2& p) const {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& ring : rings)
      for (std::size_t i = 0; i + 1 < ring.size(); ++i)
        d = std::min(d, detail::point_segment_dist(p, ring[i], ring[i + 1]));
    return d;
  }

  std::array<Vec2, 2> bbox() const {
    Vec2 lo{std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
    Vec2 hi{-lo.x, -lo.y};
    for (const auto& ring : rings)
      for (const Vec2& v : ring) {
        lo.x = std::min(lo.x, v.x);
        lo.y = std::min(lo.y, v.y);
        hi.x = std::max(hi.x, v.x);
        hi.y = std::max(hi.y, v.y);
      }
    return {lo, hi};
  }

  double short_side() const {
    const auto b = bbox();
    return std::min(b[1].x - b[0].x, b[1].y - b[0].y);
  }
};

inline bool point_in_window(const Vec2& p, const Window& w) {
  return w.contains(p);
}

// Regular grid over a rectangular extent. Cell (ix, iy) has index
// iy * nx + ix; iy = 0 is the bottom row. mask marks in-window cells.
struct GridSpec {
  double x0 = 0.0, y0 = 0.0;
  double dx = 1.0, dy = 1.0;
  int nx = 1, ny = 1;
  std::vector<std::uint8_t> mask;  // size nx * ny

  static GridSpec regular(double x0, double y0, double dx, double dy, int nx,
                          int ny) {
    if (!(dx > 0.0) || !(dy > 0.0) || nx < 1 || ny < 1)
      throw std::invalid_argument("GridSpec: need dx,dy > 0 and nx,ny >= 1");
    GridSpec g;
    g.x0 = x0;
    g.y0 = y0;
    g.dx = dx;
    g.dy = dy;
    g.nx = nx;
    g.ny = ny;
    g.mask.assign(static_cast<std::size_t>(nx) * ny, 1);
    return g;
  }

  // Grid covering the window bbox; the extent is padded by a relative 1e-9
  // so bbox-boundary points bin into the last cell rather than past it.
  // Masked cells are those whose center lies inside the window.
  static GridSpec cover(const Window& w, int nx, int ny) {
    const auto b = w.bbox();
    const double pad = 1e-9;
    const double wx = (b[1].x - b[0].x) * (1.0 + pad);
    const double wy = (b[1].y - b[0].y) * (1.0 + pad);
    GridSpec g = regular(b[0].x, b[0].y, wx / nx, wy / ny, nx, ny);
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix)
        g.mask[static_cast<std::size_t>(iy) * nx + ix] =
            w.contains(g.cell_center(ix, iy)) ? 1 : 0;
    return g;
  }

  std::size_t cell_count() const {
    return static_cast<std::size_t>(nx) * ny;
  }
  double cell_area() const { return dx * dy; }

  Vec2 cell_center(int ix, int iy) const {
    return {x0 + (ix + 0.5) * dx, y0 + (iy + 0.5) * dy};
  }
  Vec2 cell_center(std::size_t cell) const {
    return cell_center(static_cast<int>(cell % nx),
                       static_cast<int>(cell / nx));
  }

  // Containing cell index, or -1 outside the extent. A point on an interior
  // cell edge belongs to the right/top neighbor (floor of the exact ratio).
  long cell_of(const Vec2& p) const {
    const double fx = (p.x - x0) / dx;
    const double fy = (p.y - y0) / dy;
    const long ix = static_cast<long>(std::floor(fx));
    const long iy = static_cast<long>(std::floor(fy));
    if (ix < 0 || iy < 0 || ix >= nx || iy >= ny) return -1;
    return iy * nx + ix;
  }

  std::vector<std::size_t> masked_cells() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < mask.size(); ++c)
      if (mask[c]) out.push_back(c);
    return out;
  }

  double masked_area() const {
    std::size_t k = 0;
    for (auto m : mask) k += m;
    return static_cast<double>(k) * cell_area();
  }

  bool same_shape(const GridSpec& o) const {
    return nx == o.nx && ny == o.ny && x0 == o.x0 && y0 == o.y0 &&
           dx == o.dx && dy == o.dy;
  }
};

// Marked point pattern inside a window. `simple` asserts pairwise-distinct
// locations (required by the second-order machinery; see deduplicate/jitter).
struct PointPattern {
  std::vector<Vec2> points;
  std::vector<std::string> marks;     // empty or one label per point
  std::vector<int> specificity;       // empty or one code (1..5) per point
  std::shared_ptr<const Window> window;
  bool simple = false;

  std::size_t size() const { return points.size(); }

  static PointPattern make(std::vector<Vec2> pts,
                           std::shared_ptr<const Window> win,
                           bool simple_flag = false) {
    if (!win) throw std::invalid_argument("PointPattern: window required");
    for (const Vec2& p : pts)
      if (!win->contains(p))
        throw std::invalid_argument("PointPattern: point outside window");
    PointPattern pp;
    pp.points = std::move(pts);
    pp.window = std::move(win);
    pp.simple = simple_flag;
    return pp;
  }
};

// Fixed n x n distance matrix; intended for desk-scale n.
inline std::vector<double> pairwise_distances(const PointPattern& pp) {
  const std::size_t n = pp.size();
  if (n == 0) throw std::invalid_argument("pairwise_distances: empty pattern");
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = distance(pp.points[i], pp.points[j]);
      d[i * n + j] = v;
      d[j * n + i] = v;
    }
  return d;
}

inline std::size_t count_in_region(const PointPattern& pp, const Window& a) {
  std::size_t k = 0;
  for (const Vec2& p : pp.points)
    if (a.contains(p)) ++k;
  return k;
}

// Per-cell counts over the full grid array; edge ties go right/top.
inline std::vector<long> bin_to_grid(const PointPattern& pp,
                                     const GridSpec& g) {
  std::vector<long> counts(g.cell_count(), 0);
  for (const Vec2& p : pp.points) {
    const long c = g.cell_of(p);
    if (c < 0)
      throw std::invalid_argument("bin_to_grid: point outside grid extent");
    ++counts[static_cast<std::size_t>(c)];
  }
  return counts;
}

// Equirectangular projection about a reference lon/lat, in km.
struct Projection {
  double lon0 = 0.0;
  double lat0 = 0.0;
  double radius_km = 6371.0;

  Vec2 forward(double lon, double lat) const {
    const double rad = kPi / 180.0;
    return {radius_km * std::cos(lat0 * rad) * (lon - lon0) * rad,
            radius_km * (lat - lat0) * rad};
  }

  std::array<double, 2> inverse(const Vec2& p) const {
    const double rad = kPi / 180.0;
    return {lon0 + p.x / (radius_km * std::cos(lat0 * rad) * rad),
            lat0 + p.y / (radius_km * rad)};
  }
};

}  // namespace ppkit
