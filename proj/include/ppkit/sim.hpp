#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "ppkit/covar.hpp"
#include "ppkit/geom.hpp"
#include "ppkit/grf.hpp"
#include "ppkit/kernel.hpp"
#include "ppkit/random.hpp"

namespace ppkit {

// LGCP specification: log Lambda_j(s) = Z(s) beta_j + e_j(s). Univariate
// models carry ExpCovParams, bivariate ones the signed LMC.
struct LgcpModel {
  std::vector<std::vector<double>> beta;  // one coefficient vector per process
  std::optional<ExpCovParams> cov;
  std::optional<LmcParams> lmc;
  std::shared_ptr<const CovariateStack> covariates;  // null = intercept only
  GridSpec grid;

  int processes() const { return static_cast<int>(beta.size()); }
  bool bivariate() const { return processes() == 2; }

  void validate() const {
    if (beta.empty() || beta.size() > 2)
      throw std::invalid_argument("LgcpModel: 1 or 2 processes");
    const std::size_t p = covariates ? covariates->layers.size() : 0;
    for (const auto& b : beta)
      if (b.size() != p + 1)
        throw std::invalid_argument(
            "LgcpModel: coefficient count must be covariate count + 1");
    if (covariates && !covariates->grid.same_shape(grid))
      throw std::invalid_argument("LgcpModel: covariate grid mismatch");
    if (bivariate()) {
      if (!lmc) throw std::invalid_argument("LgcpModel: bivariate needs LmcParams");
      lmc->validate();
    } else {
      if (!cov) throw std::invalid_argument("LgcpModel: univariate needs ExpCovParams");
      cov->validate();
    }
  }
};

namespace detail {

// Per-masked-cell Z beta, as a full grid array (0 on unmasked cells).
inline std::vector<double> log_mean_intensity(const LgcpModel& m, int process) {
  const auto& b = m.beta[process];
  std::vector<double> out(m.grid.cell_count(), 0.0);
  if (m.covariates) {
    for (std::size_t c = 0; c < out.size(); ++c) {
      if (!m.grid.mask[c]) continue;
      double v = b[0];
      for (std::size_t j = 0; j < m.covariates->layers.size(); ++j)
        v += b[j + 1] * m.covariates->layers[j].values[c];
      out[c] = v;
    }
  } else {
    for (std::size_t c = 0; c < out.size(); ++c)
      if (m.grid.mask[c]) out[c] = b[0];
  }
  return out;
}

}  // namespace detail

// First-order intensity lambda~(s) = exp(Z beta), one field per process.
inline std::vector<IntensityField> mean_intensity(const LgcpModel& m) {
  m.validate();
  std::vector<IntensityField> out;
  for (int j = 0; j < m.processes(); ++j) {
    IntensityField f;
    f.grid = m.grid;
    f.values.assign(m.grid.cell_count(), 0.0);
    const auto logv = detail::log_mean_intensity(m, j);
    for (std::size_t c = 0; c < f.values.size(); ++c) {
      if (!m.grid.mask[c]) continue;
      const double v = std::exp(logv[c]);
      if (!std::isfinite(v))
        throw std::runtime_error("mean_intensity: overflow (implausible coefficients)");
      f.values[c] = v;
    }
    out.push_back(std::move(f));
  }
  return out;
}

// Inhomogeneous Poisson sample: per masked cell a Poisson(value * cell area)
// count, points placed uniformly within the cell. Points are re-drawn (up to
// 16 tries, then the cell center) until inside the window, so boundary cells
// cannot emit points outside the polygon.
inline PointPattern simulate_poisson(const IntensityField& field,
                                     std::shared_ptr<const Window> window,
                                     Rng& rng) {
  if (!window) throw std::invalid_argument("simulate_poisson: window required");
  const GridSpec& g = field.grid;
  PointPattern pp;
  pp.window = std::move(window);
  for (std::size_t c = 0; c < g.cell_count(); ++c) {
    if (!g.mask[c]) continue;
    const double rate = field.values[c] * g.cell_area();
    if (!(rate >= 0.0) || !std::isfinite(rate))
      throw std::invalid_argument("simulate_poisson: invalid intensity value");
    const long k = rng.poisson(rate);
    const int ix = static_cast<int>(c % g.nx);
    const int iy = static_cast<int>(c / g.nx);
    for (long i = 0; i < k; ++i) {
      Vec2 p;
      bool placed = false;
      for (int attempt = 0; attempt < 16; ++attempt) {
        p = {g.x0 + (ix + rng.uniform()) * g.dx,
             g.y0 + (iy + rng.uniform()) * g.dy};
        if (pp.window->contains(p)) {
          placed = true;
          break;
        }
      }
      if (!placed) p = g.cell_center(ix, iy);
      pp.points.push_back(p);
    }
  }
  pp.simple = true;  // continuous placement; ties have probability zero
  return pp;
}

inline PointPattern simulate_poisson(const IntensityField& field,
                                     std::shared_ptr<const Window> window,
                                     std::uint64_t seed) {
  Rng rng(seed);
  return simulate_poisson(field, std::move(window), rng);
}

struct UnivariateSim {
  PointPattern pattern;
  FieldSample field;
};

// Draw the latent field, form Lambda = exp(Z beta + e), then sample points.
inline UnivariateSim simulate_lgcp(const LgcpModel& m,
                                   std::shared_ptr<const Window> window,
                                   std::uint64_t seed) {
  m.validate();
  if (m.bivariate())
    throw std::invalid_argument("simulate_lgcp: univariate model expected");
  Rng base(seed);
  UnivariateSim out;
  out.field = simulate_field(*m.cov, m.grid, base.substream(1).seed());
  IntensityField lambda;
  lambda.grid = m.grid;
  lambda.values.assign(m.grid.cell_count(), 0.0);
  const auto logv = detail::log_mean_intensity(m, 0);
  for (std::size_t c = 0; c < lambda.values.size(); ++c)
    if (m.grid.mask[c])
      lambda.values[c] = std::exp(logv[c] + out.field.values[c]);
  Rng point_rng = base.substream(2);
  out.pattern = simulate_poisson(lambda, std::move(window), point_rng);
  return out;
}

struct BivariateSim {
  PointPattern pattern1, pattern2;
  LmcSample fields;
};

// Two conditionally independent Poisson patterns driven by the signed LMC.
inline BivariateSim simulate_bivariate_lgcp(const LgcpModel& m,
                                            std::shared_ptr<const Window> window,
                                            std::uint64_t seed) {
  m.validate();
  if (!m.bivariate())
    throw std::invalid_argument("simulate_bivariate_lgcp: bivariate model expected");
  Rng base(seed);
  BivariateSim out;
  out.fields = simulate_lmc(*m.lmc, m.grid, base.substream(1).seed());
  for (int j = 0; j < 2; ++j) {
    IntensityField lambda;
    lambda.grid = m.grid;
    lambda.values.assign(m.grid.cell_count(), 0.0);
    const auto logv = detail::log_mean_intensity(m, j);
    const auto& e = j == 0 ? out.fields.e1.values : out.fields.e2.values;
    for (std::size_t c = 0; c < lambda.values.size(); ++c)
      if (m.grid.mask[c]) lambda.values[c] = std::exp(logv[c] + e[c]);
    Rng point_rng = base.substream(2 + j);
    auto& target = j == 0 ? out.pattern1 : out.pattern2;
    target = simulate_poisson(lambda, window, point_rng);
    target.marks.assign(target.size(), j == 0 ? "1" : "2");
  }
  return out;
}

// Events-CSV serialization (schema id,lon,lat,group,specificity).
inline EventTable pattern_to_events(const PointPattern& pp,
                                    const Projection& proj,
                                    const std::string& default_group = "1") {
  EventTable t;
  t.rows.resize(pp.size());
  for (std::size_t i = 0; i < pp.size(); ++i) {
    const auto ll = proj.inverse(pp.points[i]);
    t.rows[i].id = std::to_string(i + 1);
    t.rows[i].lon = ll[0];
    t.rows[i].lat = ll[1];
    t.rows[i].group = pp.marks.empty() ? default_group : pp.marks[i];
    t.rows[i].specificity =
        pp.specificity.empty() ? 1 : pp.specificity[i];
  }
  return t;
}

inline std::string events_to_csv(const EventTable& t) {
  std::ostringstream out;
  out << "id,lon,lat,group,specificity\n";
  for (const auto& r : t.rows)
    out << r.id << ',' << fmt_double(r.lon) << ',' << fmt_double(r.lat) << ','
        << r.group << ',' << r.specificity << '\n';
  return out.str();
}

}  // namespace ppkit
