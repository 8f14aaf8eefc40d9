#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "ppkit/grf.hpp"
#include "ppkit/parallel.hpp"

namespace {

using namespace ppkit;

// Table 3 bivariate medians (BH, FE, CP columns).
const LmcParams kTable3{{1.29, 6.79}, {2.09, 130.49}, {2.28, 78.43}, -1};

TEST(ExpCorrelation, PaperValues) {
  EXPECT_DOUBLE_EQ(exp_correlation(0.0, 38.07), 1.0);
  // At h = phi the correlation is e^-1, the paper's "about 0.37".
  EXPECT_NEAR(exp_correlation(38.07, 38.07), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(exp_correlation(38.07, 38.07), 0.37, 0.005);
  // At 3 phi it is e^-3, the paper's 0.05.
  EXPECT_NEAR(exp_correlation(3 * 38.07, 38.07), std::exp(-3.0), 1e-15);
  EXPECT_NEAR(exp_correlation(3 * 38.07, 38.07), 0.05, 0.005);
  EXPECT_THROW(exp_correlation(-1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(exp_correlation(1.0, 0.0), std::invalid_argument);
}

TEST(CovE, SpecExamples) {
  EXPECT_DOUBLE_EQ(cov_e(5.0, {0.0, 3.0}), 0.0);  // sigma = 0: Poisson case
  EXPECT_DOUBLE_EQ(cov_e(0.0, {2.0, 3.0}), 4.0);
  // Table 2 BH column: sigma = 2.59, phi = 38.07 at h = phi.
  const double oracle = 2.59 * 2.59 * std::exp(-1.0);
  EXPECT_NEAR(cov_e(38.07, {2.59, 38.07}), oracle, 1e-12);
  EXPECT_NEAR(oracle, 2.4677, 2e-4);
}

TEST(LambdaCorr, SpecExamplesAndShape) {
  EXPECT_NEAR(lambda_corr(0.0, {1.7, 5.0}), 1.0, 1e-15);
  // Scalar oracle of Eq. (exp{C(h)}-1)/(exp(sigma^2)-1) at sigma=1, phi=4,
  // h=4: C = e^-1.
  const double oracle = std::expm1(std::exp(-1.0)) / std::expm1(1.0);
  EXPECT_NEAR(lambda_corr(4.0, {1.0, 4.0}), oracle, 1e-14);
  EXPECT_NEAR(oracle, 0.2587856, 1e-6);
  // Monotone decay to 0.
  double prev = 1.1;
  for (double h = 0.0; h < 60.0; h += 2.0) {
    const double v = lambda_corr(h, {1.0, 4.0});
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_LT(lambda_corr(400.0, {1.0, 4.0}), 1e-10);
  EXPECT_THROW(lambda_corr(1.0, {0.0, 4.0}), std::invalid_argument);
}

TEST(LambdaCov, ForcedValues) {
  EXPECT_DOUBLE_EQ(lambda_cov(1.0, 1.0, 3.0, {0.0, 2.0}), 0.0);
  // C(0) = ln 2 when sigma^2 = ln 2: exp{C}-1 = 1.
  const double sigma = std::sqrt(std::log(2.0));
  EXPECT_NEAR(lambda_cov(1.0, 1.0, 0.0, {sigma, 2.0}), 1.0, 1e-13);
  EXPECT_THROW(lambda_cov(0.0, 1.0, 1.0, {1.0, 1.0}), std::invalid_argument);
}

TEST(CrossCovE, SpecExamples) {
  LmcParams none = kTable3;
  none.w.sigma = 0.0;
  EXPECT_DOUBLE_EQ(cross_cov_e(10.0, none), 0.0);
  // Eq. 19 vicinity: Cov{e1(s), e2(s)} = -Var{W(s)} under sign = -1.
  EXPECT_DOUBLE_EQ(cross_cov_e(0.0, kTable3), -2.28 * 2.28);
  // CP column at h = phi_W.
  const double oracle = -2.28 * 2.28 * std::exp(-1.0);
  EXPECT_NEAR(cross_cov_e(78.43, kTable3), oracle, 1e-12);
  EXPECT_NEAR(oracle, -1.9124, 1e-4);
}

TEST(CrossCorrE, PaperValues) {
  EXPECT_NEAR(cross_corr_e(0.0, kTable3), -0.64, 0.005);
  EXPECT_NEAR(cross_corr_e(78.43, kTable3), -0.24, 0.005);
  EXPECT_NEAR(cross_corr_e(3 * 78.43, kTable3), -0.03, 0.005);
}

TEST(CrossCorrE, BoundMonotoneSign) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    LmcParams p{{rng.uniform(0.0, 3.0), rng.uniform(0.5, 50.0)},
                {rng.uniform(0.0, 3.0), rng.uniform(0.5, 50.0)},
                {rng.uniform(0.01, 3.0), rng.uniform(0.5, 50.0)},
                rng.uniform() < 0.5 ? -1 : 1};
    double prev_abs = 1e9;
    for (double h = 0.0; h <= 200.0; h += 10.0) {
      const double v = cross_corr_e(h, p);
      EXPECT_LE(std::abs(v), 1.0 + 1e-12);
      EXPECT_LE(std::abs(v), prev_abs + 1e-12);  // monotone toward 0
      if (v != 0.0)
        EXPECT_EQ(v < 0.0, p.sign < 0);  // constant sign
      prev_abs = std::abs(v);
    }
  }
}

TEST(CrossCorrLambda, SpecExamples) {
  LmcParams none = kTable3;
  none.w.sigma = 0.0;
  EXPECT_DOUBLE_EQ(cross_corr_lambda(5.0, none), 0.0);
  for (double h : {0.0, 10.0, 100.0, 400.0})
    EXPECT_LT(cross_corr_lambda(h, kTable3), 0.0);
  // Table 3 arithmetic oracle at h=0 (Eq. 13 with C12 from the signed LMC).
  const double v1 = 1.29 * 1.29 + 2.28 * 2.28;
  const double v2 = 2.09 * 2.09 + 2.28 * 2.28;
  const double oracle = std::expm1(-2.28 * 2.28) /
                        std::sqrt(std::expm1(v1) * std::expm1(v2));
  EXPECT_NEAR(cross_corr_lambda(0.0, kTable3), oracle, 1e-14);
}

TEST(MarginalCovE, SpecExamplesAndSignIndependence) {
  // h=0: sigma_Wj^2 + sigma_W^2.
  EXPECT_NEAR(marginal_cov_e(0.0, kTable3, 1), 1.29 * 1.29 + 2.28 * 2.28,
              1e-12);
  // sigma_W = 0 reduces to the own-process covariance.
  LmcParams none = kTable3;
  none.w.sigma = 0.0;
  EXPECT_NEAR(marginal_cov_e(10.0, none, 1), cov_e(10.0, kTable3.w1), 1e-15);
  // Paper: BH marginal log-intensity correlation at 6.79 km is about 0.78.
  const double corr = marginal_corr_e(6.79, kTable3, 1);
  EXPECT_NEAR(corr, 0.78, 0.01);
  // Sign never enters the marginals.
  LmcParams flipped = kTable3;
  flipped.sign = +1;
  for (double h : {0.0, 5.0, 50.0, 200.0}) {
    EXPECT_DOUBLE_EQ(marginal_cov_e(h, kTable3, 1), marginal_cov_e(h, flipped, 1));
    EXPECT_DOUBLE_EQ(marginal_cov_e(h, kTable3, 2), marginal_cov_e(h, flipped, 2));
  }
}

TEST(SimulateField, SigmaZeroGivesZeroField) {
  const auto grid = GridSpec::regular(0, 0, 1, 1, 8, 8);
  const auto f = simulate_field({0.0, 3.0}, grid, 11);
  for (double v : f.values) EXPECT_DOUBLE_EQ(v, 0.0);
  EXPECT_DOUBLE_EQ(f.mean, 0.0);
}

TEST(SimulateField, SeedDeterminismAndIndependence) {
  const auto grid = GridSpec::regular(0, 0, 1, 1, 16, 16);
  const ExpCovParams p{1.0, 4.0};
  const auto a = simulate_field(p, grid, 42);
  const auto b = simulate_field(p, grid, 42);
  EXPECT_EQ(a.values, b.values);
  const auto c = simulate_field(p, grid, 43);
  EXPECT_NE(a.values, c.values);

  // Smoke: fields from different seeds decorrelate (sample corr small).
  double sxy = 0.0, sxx = 0.0, syy = 0.0, sx = 0.0, sy = 0.0;
  const double n = static_cast<double>(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    sx += a.values[i];
    sy += c.values[i];
    sxy += a.values[i] * c.values[i];
    sxx += a.values[i] * a.values[i];
    syy += c.values[i] * c.values[i];
  }
  const double corr = (sxy - sx * sy / n) /
                      std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
  EXPECT_LT(std::abs(corr), 0.5);
}

TEST(SimulateField, MeanAndLagCovarianceMonteCarlo) {
  // sigma=1, phi=4 on a 16x16 unit grid; 3000 draws. Checks E[exp(e)] = 1
  // and the empirical lag covariances at h in {0, phi, 2 phi} within 3 SE.
  const auto grid = GridSpec::regular(0, 0, 1, 1, 16, 16);
  const ExpCovParams p{1.0, 4.0};
  const int n_sim = 3000;
  const int lags[3] = {0, 4, 8};
  std::vector<double> exp_means(n_sim);
  std::vector<std::vector<double>> lag_stats(3, std::vector<double>(n_sim));
  parallel_for(n_sim, [&](std::size_t s) {
    const auto f = simulate_field(p, grid, 1000 + s);
    double em = 0.0;
    for (double v : f.values) em += std::exp(v);
    exp_means[s] = em / f.values.size();
    for (int li = 0; li < 3; ++li) {
      const int lag = lags[li];
      double acc = 0.0;
      int cnt = 0;
      for (int iy = 0; iy < 16; ++iy)
        for (int ix = 0; ix + lag < 16; ++ix) {
          const double a = f.values[iy * 16 + ix] - f.mean;
          const double b = f.values[iy * 16 + ix + lag] - f.mean;
          acc += a * b;
          ++cnt;
        }
      lag_stats[li][s] = acc / cnt;
    }
  });
  auto mean_se = [n_sim](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= v.size();
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    var /= (v.size() - 1);
    return std::make_pair(m, std::sqrt(var / n_sim));
  };
  const auto [em, em_se] = mean_se(exp_means);
  EXPECT_NEAR(em, 1.0, 3.0 * em_se + 1e-12);
  for (int li = 0; li < 3; ++li) {
    const auto [cm, cse] = mean_se(lag_stats[li]);
    const double expected = std::exp(-lags[li] / 4.0);
    EXPECT_NEAR(cm, expected, 3.0 * cse)
        << "lag " << lags[li] << " cov " << cm << " vs " << expected;
  }
}

TEST(SimulateField, AnisotropicCellsKeepPhysicalRange) {
  // dx != dy: covariance is computed in km, not cells.
  const auto grid = GridSpec::regular(0, 0, 2.0, 0.5, 16, 16);
  const ExpCovParams p{1.0, 3.0};
  const int n_sim = 2000;
  std::vector<double> stat(n_sim);
  parallel_for(n_sim, [&](std::size_t s) {
    const auto f = simulate_field(p, grid, 7000 + s);
    // lag of 1 cell in x = 2 km; expected covariance exp(-2/3).
    double acc = 0.0;
    int cnt = 0;
    for (int iy = 0; iy < 16; ++iy)
      for (int ix = 0; ix + 1 < 16; ++ix) {
        acc += (f.values[iy * 16 + ix] - f.mean) *
               (f.values[iy * 16 + ix + 1] - f.mean);
        ++cnt;
      }
    stat[s] = acc / cnt;
  });
  double m = 0.0;
  for (double x : stat) m += x;
  m /= n_sim;
  double var = 0.0;
  for (double x : stat) var += (x - m) * (x - m);
  const double se = std::sqrt(var / (n_sim - 1) / n_sim);
  EXPECT_NEAR(m, std::exp(-2.0 / 3.0), 3.0 * se);
}

TEST(SimulateLmc, DegenerateSharedComponent) {
  // sigma_W1 = sigma_W2 = 0: e1 and e2 are (anti)copies of the same W draw.
  const auto grid = GridSpec::regular(0, 0, 1, 1, 12, 12);
  for (int sign : {1, -1}) {
    const LmcParams p{{0.0, 1.0}, {0.0, 1.0}, {1.3, 3.0}, sign};
    const auto s = simulate_lmc(p, grid, 77);
    for (std::size_t c = 0; c < grid.cell_count(); ++c) {
      const double w = s.e1.values[c] - s.e1.mean;
      EXPECT_NEAR(s.e2.values[c] - s.e2.mean, sign * w, 1e-12);
    }
  }
}

TEST(SimulateLmc, IndependentWhenSharedVarianceZero) {
  const auto grid = GridSpec::regular(0, 0, 1, 1, 12, 12);
  const LmcParams p{{1.0, 2.0}, {1.0, 2.0}, {0.0, 3.0}, -1};
  const int n_sim = 1500;
  std::vector<double> prod(n_sim);
  parallel_for(n_sim, [&](std::size_t s) {
    const auto draw = simulate_lmc(p, grid, 300 + s);
    const std::size_t c = 5 * 12 + 5;
    prod[s] = (draw.e1.values[c] - draw.e1.mean) *
              (draw.e2.values[c] - draw.e2.mean);
  });
  double m = 0.0;
  for (double x : prod) m += x;
  m /= n_sim;
  double var = 0.0;
  for (double x : prod) var += (x - m) * (x - m);
  const double se = std::sqrt(var / (n_sim - 1) / n_sim);
  EXPECT_NEAR(m, 0.0, 3.0 * se);
}

TEST(SimulateLmc, Table3CrossCorrelationMonteCarlo) {
  // Empirical corr(e1, e2) at h=0 approaches the paper's -0.64. Cells are
  // 25 km so the expanded torus comfortably embeds the FE range (130 km).
  const auto grid = GridSpec::regular(0, 0, 25.0, 25.0, 8, 8);
  const int n_sim = 4000;
  std::vector<double> x1(n_sim), x2(n_sim);
  parallel_for(n_sim, [&](std::size_t s) {
    const auto draw = simulate_lmc(kTable3, grid, 9000 + s);
    const std::size_t c = 3 * 8 + 3;
    x1[s] = draw.e1.values[c];
    x2[s] = draw.e2.values[c];
  });
  double m1 = 0.0, m2 = 0.0;
  for (int s = 0; s < n_sim; ++s) {
    m1 += x1[s];
    m2 += x2[s];
  }
  m1 /= n_sim;
  m2 /= n_sim;
  double c11 = 0.0, c22 = 0.0, c12 = 0.0;
  for (int s = 0; s < n_sim; ++s) {
    c11 += (x1[s] - m1) * (x1[s] - m1);
    c22 += (x2[s] - m2) * (x2[s] - m2);
    c12 += (x1[s] - m1) * (x2[s] - m2);
  }
  const double corr = c12 / std::sqrt(c11 * c22);
  // SE of a correlation estimate ~ (1 - rho^2)/sqrt(n).
  const double se = (1.0 - 0.64 * 0.64) / std::sqrt(static_cast<double>(n_sim));
  EXPECT_NEAR(corr, cross_corr_e(0.0, kTable3), 3.0 * se);
}

TEST(LmcParams, Validation) {
  LmcParams bad = kTable3;
  bad.sign = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  LmcParams neg = kTable3;
  neg.w1.phi = -1.0;
  EXPECT_THROW(neg.validate(), std::invalid_argument);
}

TEST(CirculantEmbedding, NoiseMapMatchesSample) {
  const auto grid = GridSpec::regular(0, 0, 1, 1, 8, 8);
  const CirculantEmbedding emb({1.5, 2.0}, grid);
  Rng rng(1);
  const auto gamma = emb.draw_noise(rng);
  const auto f1 = emb.field_from_noise(gamma);
  const auto f2 = emb.field_from_noise(gamma);
  EXPECT_EQ(f1, f2);
  EXPECT_EQ(gamma.size(), emb.noise_dim());
  EXPECT_EQ(CirculantEmbedding::base_noise_dim(grid), 2u * 16u * 16u);
}

TEST(CirculantEmbedding, AdjointIdentity) {
  // <A gamma, g> == <gamma, A^T g> for random vectors: validates the
  // gradient map used by the sampler.
  const auto grid = GridSpec::regular(0, 0, 1, 1, 6, 5);
  const CirculantEmbedding emb({1.1, 2.5}, grid);
  Rng rng(8);
  const auto gamma = emb.draw_noise(rng);
  std::vector<double> g(grid.cell_count());
  for (double& v : g) v = rng.normal();
  const auto field = emb.field_from_noise(gamma);
  const auto adj = emb.noise_gradient(g);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t c = 0; c < g.size(); ++c) lhs += field[c] * g[c];
  for (std::size_t i = 0; i < gamma.size(); ++i) rhs += gamma[i] * adj[i];
  EXPECT_NEAR(lhs, rhs, 1e-9 * (std::abs(lhs) + 1.0));
}

}  // namespace
