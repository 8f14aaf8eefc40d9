#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ppkit/geom.hpp"
#include "ppkit/kernel.hpp"
#include "ppkit/parallel.hpp"
#include "ppkit/random.hpp"
#include "ppkit/sim.hpp"

namespace ppkit {

// Empirical K curve with a Monte-Carlo envelope.
struct KResult {
  enum Kind { Univariate, Cross };
  std::vector<double> r;
  std::vector<double> khat;
  std::vector<double> mean, lo, hi;  // envelope; empty if none attached
  int n_sim = 0;
  Kind kind = Univariate;
};

// Default ladder: equally spaced radii from 0 to a quarter of the window's
// shorter side.
inline std::vector<double> default_radii(const Window& w, int m = 64) {
  if (m < 2) throw std::invalid_argument("default_radii: need m >= 2");
  const double rmax = w.short_side() / 4.0;
  std::vector<double> r(m);
  for (int i = 0; i < m; ++i)
    r[i] = rmax * static_cast<double>(i) / static_cast<double>(m - 1);
  return r;
}

namespace detail {

inline constexpr int kArcSamples = 4096;

inline const std::vector<Vec2>& arc_directions() {
  static const std::vector<Vec2> dirs = [] {
    std::vector<Vec2> d(kArcSamples);
    for (int k = 0; k < kArcSamples; ++k) {
      const double theta = 2.0 * kPi * (k + 0.5) / kArcSamples;
      d[k] = {std::cos(theta), std::sin(theta)};
    }
    return d;
  }();
  return dirs;
}

// Fraction of the circle (center s, given radius) inside the window, by
// midpoint arc sampling at 4096 points (angular resolution 2 pi / 4096).
inline double circle_inside_fraction(const Vec2& s, double radius,
                                     const Window& w) {
  const auto& dirs = arc_directions();
  int inside = 0;
  for (const Vec2& d : dirs)
    if (w.contains({s.x + radius * d.x, s.y + radius * d.y})) ++inside;
  return static_cast<double>(inside) / kArcSamples;
}

}  // namespace detail

// Ripley isotropic correction c(s,u) = 1 / (|D| g), g the in-window fraction
// of the circle through u centered at s. A circle not reaching the boundary
// has g = 1 exactly (identical to what sampling would return).
inline double isotropic_correction(const Vec2& s, const Vec2& u,
                                   const Window& w) {
  const double radius = distance(s, u);
  if (radius == 0.0)
    throw std::invalid_argument("isotropic_correction: s and u coincide");
  double g = 1.0;
  if (radius > w.boundary_distance(s))
    g = detail::circle_inside_fraction(s, radius, w);
  if (!(g > 0.0))
    throw std::runtime_error("isotropic_correction: circle entirely outside window");
  return 1.0 / (w.area * g);
}

namespace detail {

// In-window arc fractions for all partners of one source point, by the same
// 4096-direction midpoint sampling: the sampled point s + r d is inside the
// window iff the ray from s (which is inside) crosses the boundary an even
// number of times within distance r. Crossing distances are cast once per
// direction and partners are swept by increasing r, toggling parities; this
// matches circle_inside_fraction at non-degenerate geometry while costing
// one ray cast per point instead of one arc scan per pair.
class ArcFractionSweep {
 public:
  ArcFractionSweep(const Vec2& s, double r_max, const Window& w) {
    std::vector<std::pair<double, int>> events;  // (crossing distance, dir)
    const auto& dirs = arc_directions();
    for (int k = 0; k < kArcSamples; ++k) {
      const Vec2& d = dirs[k];
      for (const auto& ring : w.rings)
        for (std::size_t e = 0; e + 1 < ring.size(); ++e) {
          const double ex = ring[e + 1].x - ring[e].x;
          const double ey = ring[e + 1].y - ring[e].y;
          const double denom = d.x * ey - d.y * ex;
          if (denom == 0.0) continue;  // parallel ray: measure-zero grazing
          const double ax = ring[e].x - s.x;
          const double ay = ring[e].y - s.y;
          const double t = (ax * ey - ay * ex) / denom;
          const double u = (ax * d.y - ay * d.x) / denom;
          if (t > 0.0 && t <= r_max && u >= 0.0 && u < 1.0)
            events.emplace_back(t, k);
        }
    }
    std::sort(events.begin(), events.end());
    events_ = std::move(events);
    parity_.assign(kArcSamples, 0);
  }

  // Fraction inside at radius r; radii must be queried in ascending order.
  double fraction_at(double r) {
    while (next_ < events_.size() && events_[next_].first <= r) {
      const int dir = events_[next_].second;
      parity_[dir] ^= 1;
      outside_ += parity_[dir] ? 1 : -1;
      ++next_;
    }
    return static_cast<double>(kArcSamples - outside_) / kArcSamples;
  }

 private:
  std::vector<std::pair<double, int>> events_;
  std::vector<std::uint8_t> parity_;
  std::size_t next_ = 0;
  int outside_ = 0;
};

// Shared pair accumulation: per ordered pair (s from `from`, u from `to`)
// with 0 < d <= r_max, adds c(s,u) / (lambda_s lambda_u) into the bin of the
// first radius >= d; cumulative sums give K(r). Rows are accumulated
// independently and merged in index order, so the result does not depend on
// thread scheduling. skip_same excludes identical indices (univariate case).
inline std::vector<double> pair_k(const std::vector<Vec2>& from,
                                  const std::vector<Vec2>& to,
                                  std::span<const double> lambda_from,
                                  std::span<const double> lambda_to,
                                  const Window& w,
                                  std::span<const double> radii,
                                  bool skip_same) {
  const std::size_t m = radii.size();
  const double r_max = radii.empty() ? 0.0 : radii.back();
  std::vector<double> bdist(from.size());
  for (std::size_t i = 0; i < from.size(); ++i)
    bdist[i] = w.boundary_distance(from[i]);

  std::vector<std::vector<double>> rows(from.size());
  parallel_for(from.size(), [&](std::size_t i) {
    std::vector<double> bins(m, 0.0);
    const Vec2 s = from[i];

    // Partners by increasing distance; (distance, index).
    std::vector<std::pair<double, std::size_t>> partners;
    for (std::size_t j = 0; j < to.size(); ++j) {
      if (skip_same && i == j) continue;
      const double d = distance(s, to[j]);
      if (d > 0.0 && d <= r_max) partners.emplace_back(d, j);
    }
    std::sort(partners.begin(), partners.end());

    std::optional<ArcFractionSweep> sweep;
    for (const auto& [d, j] : partners) {
      double g = 1.0;
      if (d > bdist[i]) {
        if (!sweep) sweep.emplace(s, r_max, w);
        g = sweep->fraction_at(d);
      }
      if (!(g > 0.0))
        throw std::runtime_error("k_inhom: circle entirely outside window");
      const double weight = 1.0 / (w.area * g * lambda_from[i] * lambda_to[j]);
      const auto it = std::lower_bound(radii.begin(), radii.end(), d);
      bins[static_cast<std::size_t>(it - radii.begin())] += weight;
    }
    rows[i] = std::move(bins);
  });

  std::vector<double> k(m, 0.0);
  for (const auto& row : rows)
    for (std::size_t b = 0; b < m; ++b) k[b] += row[b];
  for (std::size_t b = 1; b < m; ++b) k[b] += k[b - 1];
  return k;
}

inline void check_intensities(std::span<const double> lambda,
                              std::size_t n, const char* who) {
  if (lambda.size() != n)
    throw std::invalid_argument(std::string(who) + ": intensity count mismatch");
  for (double v : lambda)
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument(std::string(who) +
                                  ": intensities must be positive and finite");
}

}  // namespace detail

// Empirical inhomogeneous K:
// K(r) = sum_{s != u} c(s,u) 1{0 < |s-u| <= r} / (lambda(s) lambda(u)).
inline std::vector<double> k_inhom(const PointPattern& pp,
                                   std::span<const double> lambda,
                                   std::span<const double> radii) {
  if (!pp.simple) throw std::invalid_argument("k_inhom: pattern must be simple");
  if (pp.size() == 0 || pp.size() == 1)
    return std::vector<double>(radii.size(), 0.0);  // no pairs
  detail::check_intensities(lambda, pp.size(), "k_inhom");
  return detail::pair_k(pp.points, pp.points, lambda, lambda, *pp.window,
                        radii, /*skip_same=*/true);
}

// Cross version over ordered pairs (s in pp1, u in pp2); coincident points
// across patterns are excluded by the 0 < |s-u| indicator itself.
inline std::vector<double> cross_k_inhom(const PointPattern& pp1,
                                         const PointPattern& pp2,
                                         std::span<const double> lambda1,
                                         std::span<const double> lambda2,
                                         std::span<const double> radii) {
  if (!pp1.simple || !pp2.simple)
    throw std::invalid_argument("cross_k_inhom: patterns must be simple");
  if (pp1.size() == 0 || pp2.size() == 0)
    return std::vector<double>(radii.size(), 0.0);
  detail::check_intensities(lambda1, pp1.size(), "cross_k_inhom");
  detail::check_intensities(lambda2, pp2.size(), "cross_k_inhom");
  return detail::pair_k(pp1.points, pp2.points, lambda1, lambda2, *pp1.window,
                        radii, /*skip_same=*/false);
}

// Convenience: empirical K with leave-one-out kernel intensities.
inline std::vector<double> k_inhom_kernel(const PointPattern& pp,
                                          double bandwidth,
                                          const GridSpec& grid,
                                          std::span<const double> radii) {
  if (pp.size() < 2) return std::vector<double>(radii.size(), 0.0);
  const auto lambda = loo_intensity(pp, bandwidth, grid);
  return k_inhom(pp, lambda, radii);
}

namespace detail {

// Nearest-rank quantile (1-indexed ceil(q n)) of an unsorted copy.
inline double quantile_nearest(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(n)));
  if (rank < 1) rank = 1;
  if (rank > n) rank = n;
  return v[rank - 1];
}

}  // namespace detail

// Simulated-curve bundle behind envelopes and the CSR test.
struct Envelope {
  std::vector<double> r;
  std::vector<std::vector<double>> curves;  // one K curve per simulation
  std::vector<double> mean, lo, hi;
  double level = 0.95;
  int n_sim = 0;

  KResult to_kresult(std::vector<double> khat,
                     KResult::Kind kind = KResult::Univariate) const {
    KResult out;
    out.r = r;
    out.khat = std::move(khat);
    out.mean = mean;
    out.lo = lo;
    out.hi = hi;
    out.n_sim = n_sim;
    out.kind = kind;
    return out;
  }
};

namespace detail {

inline void summarize_envelope(Envelope& env) {
  const std::size_t m = env.r.size();
  env.mean.assign(m, 0.0);
  env.lo.assign(m, 0.0);
  env.hi.assign(m, 0.0);
  std::vector<double> column(env.curves.size());
  for (std::size_t b = 0; b < m; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < env.curves.size(); ++i) {
      column[i] = env.curves[i][b];
      s += column[i];
    }
    env.mean[b] = s / static_cast<double>(env.curves.size());
    const double tail = (1.0 - env.level) / 2.0;
    env.lo[b] = quantile_nearest(column, tail);
    env.hi[b] = quantile_nearest(column, 1.0 - tail);
  }
}

}  // namespace detail

// Simulates n_sim inhomogeneous Poisson patterns from the field; each
// simulated K is computed against that pattern's own kernel-reestimated
// intensity (same bandwidth as the empirical analysis) so empirical and
// simulated curves are directly comparable. Pointwise quantile envelope.
inline Envelope poisson_envelope(const IntensityField& field,
                                 std::shared_ptr<const Window> window,
                                 double bandwidth, int n_sim,
                                 std::span<const double> radii, double level,
                                 std::uint64_t seed) {
  if (n_sim < 2) throw std::invalid_argument("poisson_envelope: n_sim >= 2");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("poisson_envelope: level in (0,1)");
  Envelope env;
  env.r.assign(radii.begin(), radii.end());
  env.level = level;
  env.n_sim = n_sim;
  env.curves.assign(n_sim, {});
  const Rng base(seed);
  parallel_for(static_cast<std::size_t>(n_sim), [&](std::size_t i) {
    Rng rng = base.substream(i);
    const PointPattern pat = simulate_poisson(field, window, rng);
    env.curves[i] = pat.size() < 2
                        ? std::vector<double>(radii.size(), 0.0)
                        : k_inhom_kernel(pat, bandwidth, field.grid, radii);
  });
  detail::summarize_envelope(env);
  return env;
}

// Independent bivariate envelope: simulate a pair of Poisson patterns from
// the two marginal fields and collect cross-K curves.
inline Envelope cross_poisson_envelope(const IntensityField& field1,
                                       const IntensityField& field2,
                                       std::shared_ptr<const Window> window,
                                       double bandwidth1, double bandwidth2,
                                       int n_sim,
                                       std::span<const double> radii,
                                       double level, std::uint64_t seed) {
  if (n_sim < 2) throw std::invalid_argument("cross_poisson_envelope: n_sim >= 2");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("cross_poisson_envelope: level in (0,1)");
  Envelope env;
  env.r.assign(radii.begin(), radii.end());
  env.level = level;
  env.n_sim = n_sim;
  env.curves.assign(n_sim, {});
  const Rng base(seed);
  parallel_for(static_cast<std::size_t>(n_sim), [&](std::size_t i) {
    Rng rng1 = base.substream(2 * i);
    Rng rng2 = base.substream(2 * i + 1);
    const PointPattern p1 = simulate_poisson(field1, window, rng1);
    const PointPattern p2 = simulate_poisson(field2, window, rng2);
    if (p1.size() < 2 || p2.size() < 2) {
      env.curves[i].assign(radii.size(), 0.0);
      return;
    }
    const auto l1 = loo_intensity(p1, bandwidth1, field1.grid);
    const auto l2 = loo_intensity(p2, bandwidth2, field2.grid);
    env.curves[i] = cross_k_inhom(p1, p2, l1, l2, radii);
  });
  detail::summarize_envelope(env);
  return env;
}

struct CsrTest {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Monte-Carlo maximum-departure test: T = max_r |K(r) - Kbar_sim(r)|,
// p = (1 + #{sims with T_sim >= T}) / (n_sim + 1).
inline CsrTest csr_test(std::span<const double> khat,
                        const std::vector<std::vector<double>>& curves) {
  if (curves.size() < 19)
    throw std::invalid_argument("csr_test: need >= 19 simulated curves");
  const std::size_t m = khat.size();
  std::vector<double> mean(m, 0.0);
  for (const auto& c : curves) {
    if (c.size() != m) throw std::invalid_argument("csr_test: curve length mismatch");
    for (std::size_t b = 0; b < m; ++b) mean[b] += c[b];
  }
  for (double& v : mean) v /= static_cast<double>(curves.size());

  auto departure = [&mean, m](std::span<const double> curve) {
    double t = 0.0;
    for (std::size_t b = 0; b < m; ++b)
      t = std::max(t, std::abs(curve[b] - mean[b]));
    return t;
  };
  CsrTest out;
  out.statistic = departure(khat);
  std::size_t exceed = 0;
  for (const auto& c : curves)
    if (departure(c) >= out.statistic) ++exceed;
  out.p_value = static_cast<double>(1 + exceed) /
                static_cast<double>(curves.size() + 1);
  return out;
}

}  // namespace ppkit
