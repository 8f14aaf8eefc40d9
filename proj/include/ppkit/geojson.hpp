#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppkit/geom.hpp"
#include "ppkit/io_util.hpp"

namespace ppkit {

// Window loaded from GeoJSON plus the projection that produced it.
struct ProjectedWindow {
  Window window;
  Projection projection;
};

namespace detail {

inline const nlohmann::json& unwrap_geometry(const nlohmann::json& j) {
  const std::string type = j.value("type", "");
  if (type == "FeatureCollection") {
    const auto& feats = j.at("features");
    if (feats.empty()) throw std::runtime_error("GeoJSON: empty FeatureCollection");
    return unwrap_geometry(feats.at(0));
  }
  if (type == "Feature") return unwrap_geometry(j.at("geometry"));
  return j;
}

inline std::vector<std::vector<std::array<double, 2>>> polygon_rings(
    const nlohmann::json& geom) {
  const std::string type = geom.value("type", "");
  std::vector<std::vector<std::array<double, 2>>> rings;
  auto push_polygon = [&rings](const nlohmann::json& poly) {
    for (const auto& ring : poly) {
      std::vector<std::array<double, 2>> r;
      for (const auto& coord : ring)
        r.push_back({coord.at(0).get<double>(), coord.at(1).get<double>()});
      rings.push_back(std::move(r));
    }
  };
  if (type == "Polygon") {
    push_polygon(geom.at("coordinates"));
  } else if (type == "MultiPolygon") {
    // First ring of each polygon is outer, rest holes; rings are kept flat
    // and even-odd membership sorts them out.
    for (const auto& poly : geom.at("coordinates")) push_polygon(poly);
  } else {
    throw std::runtime_error("GeoJSON: expected Polygon or MultiPolygon, got '" +
                             type + "'");
  }
  if (rings.empty()) throw std::runtime_error("GeoJSON: no rings");
  return rings;
}

}  // namespace detail

// Parses a GeoJSON Polygon/MultiPolygon in lon/lat degrees and projects it
// to planar km about the outer-ring area centroid.
inline ProjectedWindow window_from_geojson_text(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const auto rings = detail::polygon_rings(detail::unwrap_geometry(j));

  // Area-weighted centroid of the outer rings (holes ignored for centering).
  double cx = 0.0, cy = 0.0, total = 0.0;
  for (const auto& ring : rings) {
    double a = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
      const double cross =
          ring[i][0] * ring[i + 1][1] - ring[i + 1][0] * ring[i][1];
      a += cross;
      sx += (ring[i][0] + ring[i + 1][0]) * cross;
      sy += (ring[i][1] + ring[i + 1][1]) * cross;
    }
    if (std::abs(a) > 0.0 && std::abs(a) > total) {
      total = std::abs(a);
      cx = sx / (3.0 * a);
      cy = sy / (3.0 * a);
    }
  }
  if (total == 0.0) throw std::runtime_error("GeoJSON: degenerate polygon");

  Projection proj;
  proj.lon0 = cx;
  proj.lat0 = cy;

  std::vector<std::vector<Vec2>> projected;
  projected.reserve(rings.size());
  for (const auto& ring : rings) {
    std::vector<Vec2> r;
    r.reserve(ring.size());
    for (const auto& c : ring) r.push_back(proj.forward(c[0], c[1]));
    projected.push_back(std::move(r));
  }
  return {Window::from_rings(std::move(projected)), proj};
}

inline ProjectedWindow window_from_geojson(const std::string& path) {
  return window_from_geojson_text(read_text_file(path));
}

}  // namespace ppkit
