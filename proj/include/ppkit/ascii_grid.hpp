#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppkit/geom.hpp"
#include "ppkit/io_util.hpp"

namespace ppkit {

// ESRI ASCII raster. values are row-major starting at the TOP row
// (largest y), matching the on-disk layout.
struct AsciiGrid {
  int ncols = 0, nrows = 0;
  double xll = 0.0, yll = 0.0;
  double cellsize = 1.0;
  double nodata = -9999.0;
  std::vector<double> values;

  double x_of_col(int c) const { return xll + (c + 0.5) * cellsize; }
  double y_of_row(int r) const {
    return yll + (nrows - r - 0.5) * cellsize;
  }

  // Value of the cell containing (x, y) in the raster's own coordinates;
  // returns nodata outside the extent.
  double sample(double x, double y) const {
    const long c = static_cast<long>(std::floor((x - xll) / cellsize));
    const long r_from_bottom =
        static_cast<long>(std::floor((y - yll) / cellsize));
    if (c < 0 || c >= ncols || r_from_bottom < 0 || r_from_bottom >= nrows)
      return nodata;
    const long r = nrows - 1 - r_from_bottom;
    return values[static_cast<std::size_t>(r) * ncols + c];
  }
};

inline AsciiGrid parse_ascii_grid(const std::string& text,
                                  const std::string& origin = "<string>") {
  std::istringstream in(text);
  AsciiGrid g;
  bool have_nodata = false;
  std::string key;
  // Header: ncols nrows xllcorner yllcorner cellsize [NODATA_value]
  int header_fields = 0;
  while (header_fields < 5 || in.peek() != EOF) {
    std::streampos pos = in.tellg();
    if (!(in >> key)) throw std::runtime_error("truncated ASCII grid header: " + origin);
    std::string lower;
    for (char ch : key) lower.push_back(static_cast<char>(std::tolower(ch)));
    double v = 0.0;
    if (lower == "ncols" || lower == "nrows" || lower == "xllcorner" ||
        lower == "yllcorner" || lower == "cellsize" ||
        lower == "nodata_value") {
      if (!(in >> v))
        throw std::runtime_error("bad header value for " + key + ": " + origin);
      if (lower == "ncols") g.ncols = static_cast<int>(v);
      else if (lower == "nrows") g.nrows = static_cast<int>(v);
      else if (lower == "xllcorner") g.xll = v;
      else if (lower == "yllcorner") g.yll = v;
      else if (lower == "cellsize") g.cellsize = v;
      else { g.nodata = v; have_nodata = true; }
      ++header_fields;
    } else {
      in.seekg(pos);
      break;
    }
  }
  (void)have_nodata;
  if (g.ncols < 1 || g.nrows < 1 || !(g.cellsize > 0.0))
    throw std::runtime_error("invalid ASCII grid header: " + origin);
  const std::size_t n = static_cast<std::size_t>(g.ncols) * g.nrows;
  g.values.reserve(n);
  double v = 0.0;
  while (g.values.size() < n && (in >> v)) g.values.push_back(v);
  if (g.values.size() != n)
    throw std::runtime_error("ASCII grid: expected " + std::to_string(n) +
                             " values, got " + std::to_string(g.values.size()) +
                             ": " + origin);
  return g;
}

inline AsciiGrid read_ascii_grid(const std::string& path) {
  return parse_ascii_grid(read_text_file(path), path);
}

inline std::string ascii_grid_to_string(const AsciiGrid& g) {
  std::ostringstream out;
  out << "ncols " << g.ncols << "\n"
      << "nrows " << g.nrows << "\n"
      << "xllcorner " << fmt_double(g.xll) << "\n"
      << "yllcorner " << fmt_double(g.yll) << "\n"
      << "cellsize " << fmt_double(g.cellsize) << "\n"
      << "NODATA_value " << fmt_double(g.nodata) << "\n";
  for (int r = 0; r < g.nrows; ++r) {
    for (int c = 0; c < g.ncols; ++c) {
      if (c) out << ' ';
      out << fmt_double(g.values[static_cast<std::size_t>(r) * g.ncols + c]);
    }
    out << '\n';
  }
  return out.str();
}

inline void write_ascii_grid(const std::string& path, const AsciiGrid& g) {
  write_text_file(path, ascii_grid_to_string(g));
}

// Grid-indexed values (iy = 0 at bottom) -> ASCII raster. Requires square
// cells; unmasked cells are written as nodata.
inline AsciiGrid values_to_ascii(const GridSpec& grid,
                                 const std::vector<double>& values,
                                 double nodata = -9999.0) {
  if (values.size() != grid.cell_count())
    throw std::invalid_argument("values_to_ascii: size mismatch");
  if (std::abs(grid.dx - grid.dy) > 1e-9 * grid.dx)
    throw std::invalid_argument("values_to_ascii: cells must be square");
  AsciiGrid g;
  g.ncols = grid.nx;
  g.nrows = grid.ny;
  g.xll = grid.x0;
  g.yll = grid.y0;
  g.cellsize = grid.dx;
  g.nodata = nodata;
  g.values.resize(grid.cell_count());
  for (int iy = 0; iy < grid.ny; ++iy)
    for (int ix = 0; ix < grid.nx; ++ix) {
      const std::size_t cell = static_cast<std::size_t>(iy) * grid.nx + ix;
      const std::size_t row = static_cast<std::size_t>(grid.ny - 1 - iy);
      g.values[row * grid.nx + ix] = grid.mask[cell] ? values[cell] : nodata;
    }
  return g;
}

}  // namespace ppkit
