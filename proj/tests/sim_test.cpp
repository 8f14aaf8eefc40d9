#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "ppkit/ripley.hpp"
#include "ppkit/sim.hpp"

namespace {

using namespace ppkit;

std::shared_ptr<const Window> square10() {
  return std::make_shared<const Window>(Window::rect(0, 0, 10, 10));
}

LgcpModel intercept_model(double beta0, double sigma, double phi,
                          const GridSpec& grid) {
  LgcpModel m;
  m.beta = {{beta0}};
  m.cov = ExpCovParams{sigma, phi};
  m.grid = grid;
  return m;
}

TEST(MeanIntensity, InterceptOnly) {
  const auto grid = GridSpec::regular(0, 0, 1, 1, 4, 4);
  const auto unit = mean_intensity(intercept_model(0.0, 1.0, 1.0, grid));
  ASSERT_EQ(unit.size(), 1u);
  for (std::size_t c = 0; c < grid.cell_count(); ++c)
    EXPECT_DOUBLE_EQ(unit[0].values[c], 1.0);

  const auto two = mean_intensity(intercept_model(std::log(2.0), 1.0, 1.0, grid));
  for (std::size_t c = 0; c < grid.cell_count(); ++c)
    EXPECT_DOUBLE_EQ(two[0].values[c], 2.0);
}

TEST(MeanIntensity, CovariateOracle) {
  Rng rng(3);
  CovariateStack stack;
  stack.grid = GridSpec::regular(0, 0, 1, 1, 8, 8);
  for (const char* name : {"a", "b", "c", "d", "e", "f"}) {
    Layer l;
    l.name = name;
    for (std::size_t c = 0; c < 64; ++c) l.values.push_back(rng.normal());
    stack.add(l);
  }
  const auto st = std::make_shared<const CovariateStack>(standardize(stack));

  LgcpModel m;
  m.beta = {{0.3, -0.5, 1.2, 0.0, 2.0, -1.0, 0.25}};
  m.cov = ExpCovParams{1.0, 1.0};
  m.covariates = st;
  m.grid = st->grid;
  const auto field = mean_intensity(m);
  for (std::size_t c = 0; c < 64; ++c) {
    double z = m.beta[0][0];
    for (std::size_t j = 0; j < 6; ++j)
      z += m.beta[0][j + 1] * st->layers[j].values[c];
    EXPECT_NEAR(field[0].values[c], std::exp(z), 1e-12 * std::exp(z));
  }

  LgcpModel wrong = m;
  wrong.beta = {{0.0, 1.0}};
  EXPECT_THROW(mean_intensity(wrong), std::invalid_argument);
}

TEST(SimulatePoisson, RateIdentityAndZeroField) {
  auto w = std::make_shared<const Window>(Window::rect(0, 0, 1, 1));
  const auto grid = GridSpec::cover(*w, 8, 8);
  IntensityField f;
  f.grid = grid;
  f.values.assign(grid.cell_count(), 5.0);
  const int n_sim = 10000;
  double total = 0.0, total2 = 0.0;
  for (int s = 0; s < n_sim; ++s) {
    Rng rng(100 + s);
    const auto pp = simulate_poisson(f, w, rng);
    total += pp.size();
    total2 += static_cast<double>(pp.size()) * pp.size();
  }
  const double mean = total / n_sim;
  const double var = total2 / n_sim - mean * mean;
  const double se = std::sqrt(var / n_sim);
  EXPECT_NEAR(mean, 5.0, 3.0 * se);

  IntensityField zero;
  zero.grid = grid;
  zero.values.assign(grid.cell_count(), 0.0);
  for (int s = 0; s < 50; ++s) {
    Rng rng(s);
    EXPECT_EQ(simulate_poisson(zero, w, rng).size(), 0u);
  }
}

TEST(SimulatePoisson, StepFieldRegionMoments) {
  // Left half rate 2, right half rate 10 on the unit square.
  auto w = std::make_shared<const Window>(Window::rect(0, 0, 1, 1));
  const auto grid = GridSpec::cover(*w, 16, 16);
  IntensityField f;
  f.grid = grid;
  f.values.assign(grid.cell_count(), 0.0);
  for (std::size_t c = 0; c < grid.cell_count(); ++c)
    f.values[c] = grid.cell_center(c).x < 0.5 ? 2.0 : 10.0;
  const Window left = Window::rect(0, 0, 0.5, 1);
  const Window right = Window::rect(0.5, 0, 1, 1);
  const int n_sim = 4000;
  std::vector<double> ls(n_sim), rs(n_sim);
  double ml = 0.0, mr = 0.0;
  for (int s = 0; s < n_sim; ++s) {
    Rng rng(500 + s);
    const auto pp = simulate_poisson(f, w, rng);
    ls[s] = static_cast<double>(count_in_region(pp, left));
    rs[s] = static_cast<double>(count_in_region(pp, right));
    ml += ls[s];
    mr += rs[s];
  }
  ml /= n_sim;
  mr /= n_sim;
  double vl = 0.0, vr = 0.0;
  for (int s = 0; s < n_sim; ++s) {
    vl += (ls[s] - ml) * (ls[s] - ml);
    vr += (rs[s] - mr) * (rs[s] - mr);
  }
  vl /= (n_sim - 1);
  vr /= (n_sim - 1);
  // Poisson oracle: mean = var = rate * area.
  EXPECT_NEAR(ml, 1.0, 3.0 * std::sqrt(vl / n_sim));
  EXPECT_NEAR(mr, 5.0, 3.0 * std::sqrt(vr / n_sim));
  EXPECT_NEAR(vl / ml, 1.0, 0.1);
  EXPECT_NEAR(vr / mr, 1.0, 0.1);
}

TEST(SimulatePoisson, PointsInsideWindowAndMask) {
  // Window strictly smaller than the grid extent: points must stay inside
  // the polygon and can only come from masked cells.
  auto w = std::make_shared<const Window>(Window::from_rings(
      {{{0, 0}, {2, 0}, {2, 1}, {1, 1}, {1, 2}, {0, 2}, {0, 0}}}));
  const auto grid = GridSpec::cover(*w, 20, 20);
  IntensityField f;
  f.grid = grid;
  f.values.assign(grid.cell_count(), 0.0);
  for (std::size_t c = 0; c < grid.cell_count(); ++c)
    if (grid.mask[c]) f.values[c] = 80.0;
  Rng rng(9);
  const auto pp = simulate_poisson(f, w, rng);
  EXPECT_GT(pp.size(), 0u);
  EXPECT_TRUE(pp.simple);
  for (const auto& p : pp.points) {
    EXPECT_TRUE(w->contains(p));
    const long cell = grid.cell_of(p);
    ASSERT_GE(cell, 0);
    EXPECT_TRUE(grid.mask[static_cast<std::size_t>(cell)]);
  }
}

TEST(SimulateLgcp, AppendixAExpectedCount) {
  // beta = 0, sigma = 1, phi = 4 on [0,10]^2: expected count is 100.
  auto w = square10();
  const auto grid = GridSpec::cover(*w, 32, 32);
  const auto m = intercept_model(0.0, 1.0, 4.0, grid);
  const int n_sim = 500;
  std::vector<double> counts(n_sim);
  parallel_for(n_sim, [&](std::size_t s) {
    counts[s] =
        static_cast<double>(simulate_lgcp(m, w, 7000 + s).pattern.size());
  });
  double mean = 0.0;
  for (double c : counts) mean += c;
  mean /= n_sim;
  double var = 0.0;
  for (double c : counts) var += (c - mean) * (c - mean);
  var /= (n_sim - 1);
  const double se = std::sqrt(var / n_sim);
  EXPECT_NEAR(mean, 100.0, 3.0 * se);
}

TEST(SimulateLgcp, InterceptShiftScalesCounts) {
  auto w = square10();
  const auto grid = GridSpec::cover(*w, 32, 32);
  const double lc = std::log(3.0);
  const auto base = intercept_model(0.0, 0.8, 2.0, grid);
  const auto scaled = intercept_model(lc, 0.8, 2.0, grid);
  const int n_sim = 400;
  std::vector<double> c1(n_sim), c2(n_sim);
  parallel_for(n_sim, [&](std::size_t s) {
    c1[s] = static_cast<double>(simulate_lgcp(base, w, 100 + s).pattern.size());
    c2[s] =
        static_cast<double>(simulate_lgcp(scaled, w, 4100 + s).pattern.size());
  });
  double m1 = 0.0, m2 = 0.0;
  for (int s = 0; s < n_sim; ++s) {
    m1 += c1[s];
    m2 += c2[s];
  }
  m1 /= n_sim;
  m2 /= n_sim;
  double v2 = 0.0;
  for (int s = 0; s < n_sim; ++s) v2 += (c2[s] - m2) * (c2[s] - m2);
  v2 /= (n_sim - 1);
  EXPECT_NEAR(m2, 3.0 * m1, 3.0 * std::sqrt(v2 / n_sim) + 0.05 * m1);
}

TEST(SimulateLgcp, ConditionalCountsIndependentPoisson) {
  // Conditional on one fixed latent field, disjoint-region counts are
  // independent Poisson: dispersion index and cross-correlation checked
  // against their chi-square / normal nulls at the 1% level.
  auto w = square10();
  const auto grid = GridSpec::cover(*w, 32, 32);
  const auto field = simulate_field({1.0, 4.0}, grid, 31337);
  IntensityField lambda;
  lambda.grid = grid;
  lambda.values.assign(grid.cell_count(), 0.0);
  for (std::size_t c = 0; c < grid.cell_count(); ++c)
    if (grid.mask[c]) lambda.values[c] = std::exp(field.values[c]);
  const Window regionA = Window::rect(0, 0, 5, 10);
  const Window regionB = Window::rect(5, 0, 10, 10);
  const int n_sim = 2000;
  std::vector<double> a(n_sim), b(n_sim);
  parallel_for(n_sim, [&](std::size_t s) {
    Rng rng(60000 + s);
    const auto pp = simulate_poisson(lambda, w, rng);
    a[s] = static_cast<double>(count_in_region(pp, regionA));
    b[s] = static_cast<double>(count_in_region(pp, regionB));
  });
  auto moments = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= v.size();
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    var /= (v.size() - 1);
    return std::make_pair(m, var);
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  // Index of dispersion: (n-1) s^2 / mean ~ chi^2_{n-1}; |z| < 2.58 at 1%.
  const double za =
      ((n_sim - 1) * va / ma - (n_sim - 1)) / std::sqrt(2.0 * (n_sim - 1));
  const double zb =
      ((n_sim - 1) * vb / mb - (n_sim - 1)) / std::sqrt(2.0 * (n_sim - 1));
  EXPECT_LT(std::abs(za), 2.58);
  EXPECT_LT(std::abs(zb), 2.58);
  double cov = 0.0;
  for (int s = 0; s < n_sim; ++s) cov += (a[s] - ma) * (b[s] - mb);
  cov /= (n_sim - 1);
  const double corr = cov / std::sqrt(va * vb);
  EXPECT_LT(std::abs(corr) * std::sqrt(static_cast<double>(n_sim)), 2.58);
}

TEST(SimulateLgcp, FlatRegimeStaysInsideEnvelope) {
  // sigma = 0.1, phi = 0.1: the intensity barely varies, so the empirical K
  // stays inside the CSR envelope in >= 90% of replicates.
  auto w = square10();
  const auto grid = GridSpec::cover(*w, 32, 32);
  const auto m = intercept_model(0.0, 0.1, 0.1, grid);
  const std::vector<double> radii{0.0, 0.5, 1.0, 1.5, 2.0, 2.5};
  const int reps = 10;
  int inside = 0;
  for (int rep = 0; rep < reps; ++rep) {
    const auto sim = simulate_lgcp(m, w, 880000 + rep);
    if (sim.pattern.size() < 10) continue;
    const double h = default_bandwidth(sim.pattern);
    const auto field = kernel_intensity(sim.pattern, h, grid);
    const auto khat = k_inhom(sim.pattern, field.point_values, radii);
    const auto env = poisson_envelope(field, w, h, 99, radii, 0.95,
                                      990000 + rep);
    bool ok = true;
    for (std::size_t bIdx = 0; bIdx < radii.size(); ++bIdx)
      if (khat[bIdx] < env.lo[bIdx] || khat[bIdx] > env.hi[bIdx]) ok = false;
    if (ok) ++inside;
  }
  EXPECT_GE(inside, 9) << "flat LGCP regime escaped the CSR envelope";
}

TEST(SimulateBivariate, SharedComponentZeroLooksIndependent) {
  auto w = square10();
  const auto grid = GridSpec::cover(*w, 32, 32);
  LgcpModel m;
  m.beta = {{0.2}, {0.2}};
  m.lmc = LmcParams{{0.7, 2.0}, {0.7, 2.0}, {0.0, 2.0}, -1};
  m.grid = grid;
  const std::vector<double> radii{0.0, 0.5, 1.0, 1.5, 2.0, 2.5};
  const int reps = 10;
  int inside = 0;
  for (int rep = 0; rep < reps; ++rep) {
    const auto sim = simulate_bivariate_lgcp(m, w, 123000 + rep);
    if (sim.pattern1.size() < 10 || sim.pattern2.size() < 10) continue;
    const double h1 = default_bandwidth(sim.pattern1);
    const double h2 = default_bandwidth(sim.pattern2);
    const auto f1 = kernel_intensity(sim.pattern1, h1, grid);
    const auto f2 = kernel_intensity(sim.pattern2, h2, grid);
    const auto khat = cross_k_inhom(sim.pattern1, sim.pattern2,
                                    f1.point_values, f2.point_values, radii);
    const auto env = cross_poisson_envelope(f1, f2, w, h1, h2, 99, radii,
                                            0.95, 77000 + rep);
    bool ok = true;
    for (std::size_t bIdx = 0; bIdx < radii.size(); ++bIdx)
      if (khat[bIdx] < env.lo[bIdx] || khat[bIdx] > env.hi[bIdx]) ok = false;
    if (ok) ++inside;
  }
  EXPECT_GE(inside, 9);
}

TEST(SimulateBivariate, SignedSharedComponentRepelsOrAttracts) {
  // Dominant common process: sign = -1 pushes the cross-K below the
  // independence envelope at small r (repulsion); sign = +1 above.
  auto w = square10();
  const auto grid = GridSpec::cover(*w, 32, 32);
  const std::vector<double> radii{0.0, 0.5, 1.0, 1.5, 2.0, 2.5};
  for (int sign : {-1, +1}) {
    LgcpModel m;
    m.beta = {{0.0}, {0.0}};
    m.lmc = LmcParams{{0.3, 1.0}, {0.3, 1.0}, {1.2, 3.0}, sign};
    m.grid = grid;
    const int reps = 10;
    int hits = 0;
    for (int rep = 0; rep < reps; ++rep) {
      const auto sim =
          simulate_bivariate_lgcp(m, w, 52000 + 1000 * (sign + 2) + rep);
      if (sim.pattern1.size() < 10 || sim.pattern2.size() < 10) continue;
      const double h1 = default_bandwidth(sim.pattern1);
      const double h2 = default_bandwidth(sim.pattern2);
      const auto f1 = kernel_intensity(sim.pattern1, h1, grid);
      const auto f2 = kernel_intensity(sim.pattern2, h2, grid);
      const auto khat = cross_k_inhom(sim.pattern1, sim.pattern2,
                                      f1.point_values, f2.point_values, radii);
      const auto env = cross_poisson_envelope(f1, f2, w, h1, h2, 99, radii,
                                              0.95, 35000 + rep);
      bool hit = false;
      for (std::size_t bIdx = 1; bIdx < radii.size(); ++bIdx) {
        if (sign < 0 && khat[bIdx] < env.lo[bIdx]) hit = true;
        if (sign > 0 && khat[bIdx] > env.hi[bIdx]) hit = true;
      }
      if (hit) ++hits;
    }
    EXPECT_GE(hits, 8) << "sign=" << sign;
  }
}

TEST(EventsCsv, PatternRoundTrip) {
  auto w = square10();
  Projection proj{7.0, 8.0};
  auto pp = PointPattern::make({{1, 1}, {2, 3}, {4, 4}}, w, true);
  pp.marks = {"1", "1", "2"};
  pp.specificity = {1, 2, 1};
  const auto table = pattern_to_events(pp, proj);
  const auto csv = events_to_csv(table);
  const auto loaded = load_events_text(csv, *w, proj);
  ASSERT_EQ(loaded.table.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto p =
        proj.forward(loaded.table.rows[i].lon, loaded.table.rows[i].lat);
    EXPECT_NEAR(p.x, pp.points[i].x, 1e-9);
    EXPECT_NEAR(p.y, pp.points[i].y, 1e-9);
    EXPECT_EQ(loaded.table.rows[i].group, pp.marks[i]);
    EXPECT_EQ(loaded.table.rows[i].specificity, pp.specificity[i]);
  }
}

}  // namespace
