#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppkit/ascii_grid.hpp"
#include "ppkit/geom.hpp"
#include "ppkit/io_util.hpp"
#include "ppkit/random.hpp"

namespace ppkit {

// One covariate raster aligned to the stack's grid. log1p layers carry
// log(x + 1)-transformed values and are aggregated on the raw scale.
struct Layer {
  std::string name;
  std::vector<double> values;  // full grid array; meaningful on masked cells
  bool log1p = false;
  bool standardized = false;
  double mean = 0.0;  // captured at standardize time
  double sd = 0.0;
};

struct CovariateStack {
  GridSpec grid;
  std::vector<Layer> layers;

  const Layer& layer(const std::string& name) const {
    for (const auto& l : layers)
      if (l.name == name) return l;
    throw std::invalid_argument("CovariateStack: no layer '" + name + "'");
  }

  bool has(const std::string& name) const {
    for (const auto& l : layers)
      if (l.name == name) return true;
    return false;
  }

  void add(Layer l) {
    if (l.values.size() != grid.cell_count())
      throw std::invalid_argument("CovariateStack: layer '" + l.name +
                                  "' does not match grid");
    if (has(l.name))
      throw std::invalid_argument("CovariateStack: duplicate layer '" +
                                  l.name + "'");
    layers.push_back(std::move(l));
  }
};

struct EventRow {
  std::string id;
  double lon = 0.0;
  double lat = 0.0;
  std::string group;
  int specificity = 1;
};

struct EventTable {
  std::vector<EventRow> rows;
  std::size_t size() const { return rows.size(); }
};

struct LoadedEvents {
  EventTable table;
  std::size_t dropped_outside = 0;
};

// Events CSV schema: header id,lon,lat,group,specificity (any column order).
// Rows outside the window are dropped and counted; malformed rows are hard
// errors naming the line.
inline LoadedEvents load_events_text(const std::string& text,
                                     const Window& window,
                                     const Projection& proj,
                                     const std::string& origin = "<string>") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(origin + ": empty events CSV");
  const auto header = detail::split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"id", "lon", "lat", "group", "specificity"})
    if (!col.count(need))
      throw std::runtime_error(origin + ": missing CSV column '" +
                               std::string(need) + "'");

  LoadedEvents out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    const std::string where = origin + " line " + std::to_string(line_no);
    if (fields.size() < header.size())
      throw std::runtime_error(where + ": expected " +
                               std::to_string(header.size()) + " fields");
    EventRow row;
    try {
      row.id = fields[col["id"]];
      row.lon = detail::parse_double(fields[col["lon"]], "lon");
      row.lat = detail::parse_double(fields[col["lat"]], "lat");
      row.group = fields[col["group"]];
      row.specificity =
          static_cast<int>(detail::parse_long(fields[col["specificity"]],
                                              "specificity"));
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    if (!std::isfinite(row.lon) || !std::isfinite(row.lat))
      throw std::runtime_error(where + ": non-finite coordinates");
    if (row.specificity < 1 || row.specificity > 5)
      throw std::runtime_error(where + ": specificity must be in 1..5, got " +
                               std::to_string(row.specificity));
    if (window.contains(proj.forward(row.lon, row.lat)))
      out.table.rows.push_back(std::move(row));
    else
      ++out.dropped_outside;
  }
  return out;
}

inline LoadedEvents load_events(const std::string& path, const Window& window,
                                const Projection& proj) {
  return load_events_text(read_text_file(path), window, proj, path);
}

struct SpecFilter {
  enum Kind { Any, Eq, Gt } kind = Any;
  int value = 1;

  bool pass(int s) const {
    switch (kind) {
      case Eq: return s == value;
      case Gt: return s > value;
      default: return true;
    }
  }

  // "any", "=k", ">k".
  static SpecFilter parse(const std::string& s) {
    const std::string t = detail::trim(s);
    if (t.empty() || t == "any") return {};
    if (t[0] == '=') return {Eq, static_cast<int>(detail::parse_long(t.substr(1), "specificity filter"))};
    if (t[0] == '>') return {Gt, static_cast<int>(detail::parse_long(t.substr(1), "specificity filter"))};
    throw std::runtime_error("bad specificity filter: '" + s + "'");
  }
};

inline EventTable filter_events(const EventTable& t,
                                const std::optional<std::string>& group,
                                const SpecFilter& spec = {}) {
  EventTable out;
  for (const auto& row : t.rows) {
    if (group && row.group != *group) continue;
    if (!spec.pass(row.specificity)) continue;
    out.rows.push_back(row);
  }
  return out;
}

inline PointPattern to_pattern(const EventTable& t, const Projection& proj,
                               std::shared_ptr<const Window> window) {
  PointPattern pp;
  pp.window = std::move(window);
  pp.points.reserve(t.size());
  pp.marks.reserve(t.size());
  pp.specificity.reserve(t.size());
  for (const auto& row : t.rows) {
    pp.points.push_back(proj.forward(row.lon, row.lat));
    pp.marks.push_back(row.group);
    pp.specificity.push_back(row.specificity);
  }
  return pp;
}

struct DedupResult {
  PointPattern pattern;
  std::size_t removed = 0;
};

// Keeps the first occurrence of each exact location; result is `simple`.
inline DedupResult deduplicate(const PointPattern& pp) {
  DedupResult out;
  out.pattern.window = pp.window;
  std::map<std::pair<double, double>, bool> seen;
  for (std::size_t i = 0; i < pp.size(); ++i) {
    const auto key = std::make_pair(pp.points[i].x, pp.points[i].y);
    if (seen.count(key)) {
      ++out.removed;
      continue;
    }
    seen[key] = true;
    out.pattern.points.push_back(pp.points[i]);
    if (!pp.marks.empty()) out.pattern.marks.push_back(pp.marks[i]);
    if (!pp.specificity.empty())
      out.pattern.specificity.push_back(pp.specificity[i]);
  }
  out.pattern.simple = true;
  return out;
}

// Seeded Gaussian displacement in degrees, applied to lon/lat before any
// projection. Repeated until all locations are unique (a.s. one pass).
inline EventTable jitter_events(const EventTable& t, double sd_degrees,
                                std::uint64_t seed) {
  if (!(sd_degrees > 0.0))
    throw std::invalid_argument("jitter: sd must be > 0");
  Rng rng(seed);
  EventTable out = t;
  for (auto& row : out.rows) {
    row.lon += rng.normal(0.0, sd_degrees);
    row.lat += rng.normal(0.0, sd_degrees);
  }
  for (int pass = 0; pass < 64; ++pass) {
    std::map<std::pair<double, double>, std::size_t> seen;
    bool collision = false;
    for (auto& row : out.rows) {
      const auto key = std::make_pair(row.lon, row.lat);
      if (seen.count(key)) {
        row.lon += rng.normal(0.0, sd_degrees);
        row.lat += rng.normal(0.0, sd_degrees);
        collision = true;
      } else {
        seen[key] = 1;
      }
    }
    if (!collision) return out;
  }
  throw std::runtime_error("jitter: could not separate locations");
}

// Pattern-level jitter: inverse-project, displace in degrees, re-project.
// Equivalent to jittering the raw lon/lat (the projection is affine).
inline PointPattern jitter(const PointPattern& pp, const Projection& proj,
                           double sd_degrees, std::uint64_t seed) {
  if (!(sd_degrees > 0.0))
    throw std::invalid_argument("jitter: sd must be > 0");
  EventTable t;
  t.rows.resize(pp.size());
  for (std::size_t i = 0; i < pp.size(); ++i) {
    const auto ll = proj.inverse(pp.points[i]);
    t.rows[i].lon = ll[0];
    t.rows[i].lat = ll[1];
    if (!pp.marks.empty()) t.rows[i].group = pp.marks[i];
    if (!pp.specificity.empty()) t.rows[i].specificity = pp.specificity[i];
  }
  const EventTable jittered = jitter_events(t, sd_degrees, seed);
  PointPattern out;
  out.window = pp.window;
  out.points.reserve(pp.size());
  for (const auto& row : jittered.rows)
    out.points.push_back(proj.forward(row.lon, row.lat));
  out.marks = pp.marks;
  out.specificity = pp.specificity;
  out.simple = true;
  return out;
}

// Gelman-style scaling: de-mean and divide by twice the (population) sd over
// masked cells, so non-constant layers end with mean 0 and sd 0.5.
inline CovariateStack standardize(const CovariateStack& stack) {
  CovariateStack out = stack;
  const auto cells = stack.grid.masked_cells();
  if (cells.empty())
    throw std::invalid_argument("standardize: grid has no masked cells");
  for (auto& layer : out.layers) {
    double mean = 0.0;
    for (auto c : cells) mean += layer.values[c];
    mean /= static_cast<double>(cells.size());
    double var = 0.0;
    for (auto c : cells) {
      const double d = layer.values[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cells.size());
    const double sd = std::sqrt(var);
    if (!(sd > 0.0))
      throw std::invalid_argument("standardize: layer '" + layer.name +
                                  "' is constant over masked cells");
    for (auto c : cells) layer.values[c] = (layer.values[c] - mean) / (2.0 * sd);
    layer.mean = mean;
    layer.sd = sd;
    layer.standardized = true;
  }
  return out;
}

namespace detail {

// Integer nesting factor of coarse step over fine step, or 0 if non-nesting.
inline int nesting_factor(double coarse, double fine) {
  const double ratio = coarse / fine;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * ratio) return 0;
  return static_cast<int>(rounded);
}

}  // namespace detail

// Mean-aggregation to a coarser grid that exactly tiles the fine grid.
// log1p layers are averaged on the raw scale. A coarse cell keeps its mask
// only where it is masked and covers at least one masked fine cell.
inline CovariateStack aggregate(const CovariateStack& stack,
                                const GridSpec& coarse) {
  const GridSpec& fine = stack.grid;
  const int kx = detail::nesting_factor(coarse.dx, fine.dx);
  const int ky = detail::nesting_factor(coarse.dy, fine.dy);
  if (kx == 0 || ky == 0 || std::abs(coarse.x0 - fine.x0) > 1e-9 * fine.dx ||
      std::abs(coarse.y0 - fine.y0) > 1e-9 * fine.dy ||
      coarse.nx * kx != fine.nx || coarse.ny * ky != fine.ny)
    throw std::invalid_argument("aggregate: grids do not nest");

  CovariateStack out;
  out.grid = coarse;
  for (const auto& layer : stack.layers) {
    Layer cl;
    cl.name = layer.name;
    cl.log1p = layer.log1p;
    cl.standardized = layer.standardized;
    cl.values.assign(coarse.cell_count(), 0.0);
    const bool raw_scale = layer.log1p && !layer.standardized;
    for (int cy = 0; cy < coarse.ny; ++cy)
      for (int cx = 0; cx < coarse.nx; ++cx) {
        const std::size_t cc = static_cast<std::size_t>(cy) * coarse.nx + cx;
        double sum = 0.0;
        std::size_t count = 0;
        for (int oy = 0; oy < ky; ++oy)
          for (int ox = 0; ox < kx; ++ox) {
            const std::size_t fc =
                static_cast<std::size_t>(cy * ky + oy) * fine.nx +
                (cx * kx + ox);
            if (!fine.mask[fc]) continue;
            sum += raw_scale ? std::expm1(layer.values[fc]) : layer.values[fc];
            ++count;
          }
        if (count == 0) {
          out.grid.mask[cc] = 0;
          continue;
        }
        const double mean = sum / static_cast<double>(count);
        cl.values[cc] = raw_scale ? std::log1p(mean) : mean;
      }
    out.layers.push_back(std::move(cl));
  }
  return out;
}

// Piecewise-constant upsample of a coarse stack back onto a nesting fine
// grid; this is how coarse covariates enter a fine computational grid.
inline CovariateStack refine(const CovariateStack& stack,
                             const GridSpec& fine) {
  const GridSpec& coarse = stack.grid;
  const int kx = detail::nesting_factor(coarse.dx, fine.dx);
  const int ky = detail::nesting_factor(coarse.dy, fine.dy);
  if (kx == 0 || ky == 0 || coarse.nx * kx != fine.nx ||
      coarse.ny * ky != fine.ny)
    throw std::invalid_argument("refine: grids do not nest");
  CovariateStack out;
  out.grid = fine;
  for (const auto& layer : stack.layers) {
    Layer fl;
    fl.name = layer.name;
    fl.log1p = layer.log1p;
    fl.standardized = layer.standardized;
    fl.values.assign(fine.cell_count(), 0.0);
    for (int iy = 0; iy < fine.ny; ++iy)
      for (int ix = 0; ix < fine.nx; ++ix) {
        const std::size_t cc =
            static_cast<std::size_t>(iy / ky) * coarse.nx + (ix / kx);
        fl.values[static_cast<std::size_t>(iy) * fine.nx + ix] =
            layer.values[cc];
      }
    out.layers.push_back(std::move(fl));
  }
  return out;
}

// Element-wise product layer, computed on standardized inputs.
inline Layer interaction_layer(const CovariateStack& stack,
                               const std::string& a, const std::string& b) {
  const Layer& la = stack.layer(a);
  const Layer& lb = stack.layer(b);
  if (!la.standardized || !lb.standardized)
    throw std::invalid_argument("interaction_layer: standardize inputs first");
  Layer out;
  out.name = a + "*" + b;
  out.standardized = true;  // product of standardized inputs enters as-is
  out.values.resize(stack.grid.cell_count());
  for (std::size_t c = 0; c < out.values.size(); ++c)
    out.values[c] = la.values[c] * lb.values[c];
  return out;
}

// Design matrix over masked cells, ordered by cell index, with a leading
// intercept column of ones.
struct DesignMatrix {
  std::vector<double> values;       // row-major, rows x ncols
  std::size_t ncols = 0;
  std::vector<std::size_t> cells;   // row i corresponds to cells[i]

  std::size_t rows() const { return cells.size(); }
  double at(std::size_t r, std::size_t c) const {
    return values[r * ncols + c];
  }
};

inline DesignMatrix design_matrix(const CovariateStack& stack) {
  for (const auto& l : stack.layers)
    if (!l.standardized)
      throw std::invalid_argument("design_matrix: layer '" + l.name +
                                  "' is not standardized");
  DesignMatrix dm;
  dm.cells = stack.grid.masked_cells();
  dm.ncols = stack.layers.size() + 1;
  dm.values.resize(dm.cells.size() * dm.ncols);
  for (std::size_t r = 0; r < dm.cells.size(); ++r) {
    dm.values[r * dm.ncols] = 1.0;
    for (std::size_t j = 0; j < stack.layers.size(); ++j)
      dm.values[r * dm.ncols + j + 1] = stack.layers[j].values[dm.cells[r]];
  }
  return dm;
}

struct City {
  std::string name;
  double lon = 0.0;
  double lat = 0.0;
};

// City list CSV: header name,lon,lat.
inline std::vector<City> load_cities_text(const std::string& text,
                                          const std::string& origin = "<string>") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(origin + ": empty city CSV");
  const auto header = detail::split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"name", "lon", "lat"})
    if (!col.count(need))
      throw std::runtime_error(origin + ": missing CSV column '" +
                               std::string(need) + "'");
  std::vector<City> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    const std::string where = origin + " line " + std::to_string(line_no);
    if (f.size() < header.size())
      throw std::runtime_error(where + ": short row");
    City c;
    c.name = f[col["name"]];
    c.lon = detail::parse_double(f[col["lon"]], "lon");
    c.lat = detail::parse_double(f[col["lat"]], "lat");
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<City> load_cities(const std::string& path) {
  return load_cities_text(read_text_file(path), path);
}

// Distance (km) from each cell centroid to the nearest listed city.
inline Layer mdis_layer(const GridSpec& grid, const std::vector<City>& cities,
                        const Projection& proj,
                        const std::string& name = "mdis") {
  if (cities.empty()) throw std::invalid_argument("mdis_layer: no cities");
  std::vector<Vec2> pts;
  pts.reserve(cities.size());
  for (const auto& c : cities) pts.push_back(proj.forward(c.lon, c.lat));
  Layer out;
  out.name = name;
  out.values.assign(grid.cell_count(), 0.0);
  for (std::size_t cell = 0; cell < grid.cell_count(); ++cell) {
    const Vec2 u = grid.cell_center(cell);
    double best = std::numeric_limits<double>::infinity();
    for (const Vec2& p : pts) best = std::min(best, distance(u, p));
    out.values[cell] = best;
  }
  return out;
}

// Nearest-neighbor sample of a lon/lat raster onto a projected-km grid.
// NODATA under a masked cell is an error naming the layer.
inline Layer raster_to_layer(const AsciiGrid& raster, const std::string& name,
                             const GridSpec& grid, const Projection& proj,
                             bool log1p_transform = false) {
  Layer out;
  out.name = name;
  out.log1p = log1p_transform;
  out.values.assign(grid.cell_count(), 0.0);
  for (std::size_t cell = 0; cell < grid.cell_count(); ++cell) {
    if (!grid.mask[cell]) continue;
    const auto ll = proj.inverse(grid.cell_center(cell));
    const double v = raster.sample(ll[0], ll[1]);
    if (v == raster.nodata)
      throw std::runtime_error("raster layer '" + name +
                               "': NODATA under masked cell " +
                               std::to_string(cell));
    if (log1p_transform && v < 0.0)
      throw std::runtime_error("raster layer '" + name +
                               "': negative value under log1p");
    out.values[cell] = log1p_transform ? std::log1p(v) : v;
  }
  return out;
}

// Longitude / latitude coordinate layers (degrees at cell centroids).
inline Layer coordinate_layer(const GridSpec& grid, const Projection& proj,
                              bool longitude) {
  Layer out;
  out.name = longitude ? "lon" : "lat";
  out.values.assign(grid.cell_count(), 0.0);
  for (std::size_t cell = 0; cell < grid.cell_count(); ++cell) {
    const auto ll = proj.inverse(grid.cell_center(cell));
    out.values[cell] = longitude ? ll[0] : ll[1];
  }
  return out;
}

}  // namespace ppkit
