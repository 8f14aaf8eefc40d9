#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppkit/covar.hpp"
#include "ppkit/geom.hpp"
#include "ppkit/grf.hpp"
#include "ppkit/kernel.hpp"
#include "ppkit/parallel.hpp"
#include "ppkit/random.hpp"
#include "ppkit/ripley.hpp"
#include "ppkit/sim.hpp"

namespace ppkit {

// Riemann-sum LGCP log-likelihood on a count grid:
// sum_c [ n_c log Lambda_c - Lambda_c A_c ].
inline double riemann_loglik(std::span<const long> counts,
                             std::span<const double> log_intensity,
                             std::span<const double> cell_areas) {
  if (counts.size() != log_intensity.size() ||
      counts.size() != cell_areas.size())
    throw std::invalid_argument("riemann_loglik: length mismatch");
  double ll = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double x = log_intensity[c];
    if (!std::isfinite(x))
      throw std::invalid_argument("riemann_loglik: non-finite log-intensity");
    ll += static_cast<double>(counts[c]) * x - std::exp(x) * cell_areas[c];
  }
  return ll;
}

inline double riemann_loglik(std::span<const long> counts,
                             std::span<const double> log_intensity,
                             double cell_area) {
  const std::vector<double> areas(counts.size(), cell_area);
  return riemann_loglik(counts, log_intensity, areas);
}

// Minimum-contrast fit of (sigma, phi).
struct MomentFit {
  double sigma = 0.0;
  double phi = 1.0;
  double contrast = 0.0;
  double r_lo = 0.0, r_hi = 0.0;
  double exponent = 0.25;
  bool on_boundary = false;
};

namespace detail {

// Theoretical LGCP K for exponential covariance, evaluated cumulatively on
// the radius ladder: K(r) = 2 pi int_0^r s exp{sigma^2 e^(-s/phi)} ds.
inline std::vector<double> lgcp_theoretical_k(std::span<const double> radii,
                                              double sigma, double phi) {
  const double s2 = sigma * sigma;
  auto integrand = [s2, phi](double s) {
    return s * std::exp(s2 * std::exp(-s / phi));
  };
  std::vector<double> out(radii.size(), 0.0);
  double acc = 0.0;
  double prev_r = 0.0;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const double r = radii[i];
    const int panels = 8;  // Simpson per ladder segment
    const double width = (r - prev_r) / panels;
    if (width > 0.0) {
      for (int k = 0; k < panels; ++k) {
        const double a = prev_r + k * width;
        acc += width / 6.0 *
               (integrand(a) + 4.0 * integrand(a + 0.5 * width) +
                integrand(a + width));
      }
    }
    out[i] = 2.0 * kPi * acc;
    prev_r = r;
  }
  return out;
}

}  // namespace detail

// Matches the empirical inhomogeneous K against the LGCP theoretical K by
// minimizing int_{r_lo}^{r_hi} {Khat(r)^q - K_theta(r)^q}^2 dr over a
// log-spaced (sigma, phi) lattice refined by coordinate descent.
inline MomentFit min_contrast(const PointPattern& pp,
                              const IntensityField& mean_intensity,
                              double r_lo, double r_hi, double q = 0.25,
                              int n_radii = 64, int lattice = 32) {
  if (!pp.simple) throw std::invalid_argument("min_contrast: pattern must be simple");
  if (!(r_hi > r_lo) || !(r_lo >= 0.0))
    throw std::invalid_argument("min_contrast: bad r range");
  const GridSpec& g = mean_intensity.grid;
  std::vector<double> lambda(pp.size());
  for (std::size_t i = 0; i < pp.size(); ++i) {
    const long c = g.cell_of(pp.points[i]);
    if (c < 0) throw std::invalid_argument("min_contrast: point outside grid");
    lambda[i] = mean_intensity.values[static_cast<std::size_t>(c)];
  }

  std::vector<double> radii(n_radii);
  for (int i = 0; i < n_radii; ++i)
    radii[i] = r_hi * static_cast<double>(i + 1) / n_radii;
  const auto khat = k_inhom(pp, lambda, radii);

  std::vector<double> khat_q(radii.size());
  for (std::size_t i = 0; i < radii.size(); ++i)
    khat_q[i] = std::pow(std::max(khat[i], 0.0), q);

  auto contrast = [&](double sigma, double phi) {
    const auto ktheo = detail::lgcp_theoretical_k(radii, sigma, phi);
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < radii.size(); ++i) {
      if (radii[i] < r_lo) continue;
      const double fa = khat_q[i] - std::pow(ktheo[i], q);
      const double fb = khat_q[i + 1] - std::pow(ktheo[i + 1], q);
      acc += 0.5 * (fa * fa + fb * fb) * (radii[i + 1] - radii[i]);
    }
    return acc;
  };

  const double ls_lo = std::log(0.05), ls_hi = std::log(4.0);
  const double lp_lo = std::log(r_hi / 50.0), lp_hi = std::log(2.0 * r_hi);
  double best_ls = ls_lo, best_lp = lp_lo;
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < lattice; ++a)
    for (int b = 0; b < lattice; ++b) {
      const double ls = ls_lo + (ls_hi - ls_lo) * a / (lattice - 1);
      const double lp = lp_lo + (lp_hi - lp_lo) * b / (lattice - 1);
      const double v = contrast(std::exp(ls), std::exp(lp));
      if (v < best) {
        best = v;
        best_ls = ls;
        best_lp = lp;
      }
    }

  // Golden-section refinement, one coordinate at a time.
  const double gold = 0.5 * (std::sqrt(5.0) - 1.0);
  auto line_min = [&](double& coord, bool sigma_axis, double step) {
    double lo = coord - step, hi = coord + step;
    double x1 = hi - gold * (hi - lo), x2 = lo + gold * (hi - lo);
    auto eval = [&](double v) {
      return sigma_axis ? contrast(std::exp(v), std::exp(best_lp))
                        : contrast(std::exp(best_ls), std::exp(v));
    };
    double f1 = eval(x1), f2 = eval(x2);
    for (int it = 0; it < 24; ++it) {
      if (f1 < f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - gold * (hi - lo);
        f1 = eval(x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + gold * (hi - lo);
        f2 = eval(x2);
      }
    }
    coord = 0.5 * (lo + hi);
  };
  const double step_ls = (ls_hi - ls_lo) / (lattice - 1);
  const double step_lp = (lp_hi - lp_lo) / (lattice - 1);
  for (int sweep = 0; sweep < 5; ++sweep) {
    line_min(best_ls, true, step_ls);
    line_min(best_lp, false, step_lp);
  }

  MomentFit fit;
  fit.sigma = std::exp(best_ls);
  fit.phi = std::exp(best_lp);
  fit.contrast = contrast(fit.sigma, fit.phi);
  fit.r_lo = r_lo;
  fit.r_hi = r_hi;
  fit.exponent = q;
  fit.on_boundary = best_ls <= ls_lo + 1e-9 || best_ls >= ls_hi - 1e-9 ||
                    best_lp <= lp_lo + 1e-9 || best_lp >= lp_hi - 1e-9;
  return fit;
}

// MCMC configuration. Prior means for log sigma / log phi take one value per
// latent component (1 univariate; 3 bivariate: W1, W2, W); a single value is
// broadcast. Paper-scale presets follow the reported protocol; the desk
// preset is the reduced configuration used by the test suites.
struct McmcConfig {
  long burn_in = 20000;
  long thin = 20;
  int n_samples = 500;
  double latent_step = 0.05;
  double beta_step = 0.05;
  double cov_step = 0.15;
  double beta_prior_var = 1e6;
  std::vector<double> log_sigma_prior_mean{0.0};  // log(1)
  double log_sigma_prior_var = 0.15;
  std::vector<double> log_phi_prior_mean{0.0};  // center at log(MCM phi-hat)
  double log_phi_prior_var = 0.15;
  double target_accept_langevin = 0.574;
  double target_accept_rw = 0.234;
  std::uint64_t seed = 1;
  bool likelihood_off = false;  // test hook: sample the priors only
  bool store_latent = true;
  double mcm_phi_hint = 0.0;  // warn when cell width exceeds this

  void validate() const {
    if (burn_in < 0 || thin < 1 || n_samples < 1)
      throw std::invalid_argument("McmcConfig: burn_in >= 0, thin >= 1, n_samples >= 1");
    if (!(beta_prior_var > 0.0) || !(log_sigma_prior_var > 0.0) ||
        !(log_phi_prior_var > 0.0))
      throw std::invalid_argument("McmcConfig: prior variances must be > 0");
    if (!(latent_step > 0.0) || !(beta_step > 0.0) || !(cov_step > 0.0))
      throw std::invalid_argument("McmcConfig: step sizes must be > 0");
  }

  static McmcConfig desk() { return McmcConfig{}; }

  static McmcConfig paper_univariate() {
    McmcConfig c;
    c.burn_in = 1000000;
    c.thin = 3000;
    c.n_samples = 1000;
    return c;
  }

  static McmcConfig paper_bivariate() {
    McmcConfig c;
    c.burn_in = 1000000;
    c.thin = 5000;
    c.n_samples = 1000;
    return c;
  }
};

struct ParamDraw {
  std::vector<std::vector<double>> beta;  // per process
  std::vector<double> sigma, phi;         // per latent component
};

struct PosteriorSamples {
  std::vector<ParamDraw> draws;
  int processes = 1;
  int sign = 1;
  GridSpec grid;
  std::vector<std::vector<double>> latent_mean, latent_sd;  // per process e(s)
  std::map<std::string, double> acceptance;
  std::vector<std::string> warnings;

  LmcParams lmc_at(std::size_t t) const {
    if (processes != 2) throw std::logic_error("lmc_at: univariate samples");
    const ParamDraw& d = draws.at(t);
    return LmcParams{{d.sigma[0], d.phi[0]},
                     {d.sigma[1], d.phi[1]},
                     {d.sigma[2], d.phi[2]},
                     sign};
  }
};

namespace detail {

// Robbins-Monro step-size adaptation on the log scale, frozen after burn-in.
struct StepAdapter {
  double log_step;
  double target;
  long t = 0;

  StepAdapter(double initial, double target_rate)
      : log_step(std::log(initial)), target(target_rate) {}

  double step() const { return std::exp(log_step); }

  void update(double accept_prob) {
    ++t;
    const double c = 1.0 / (target * (1.0 - target));
    log_step += c * (accept_prob - target) /
                std::pow(static_cast<double>(std::max<long>(t, 10)), 0.6);
    if (log_step < std::log(1e-13))
      throw std::runtime_error("MCMC: divergent adaptation (step size underflow)");
  }
};

// Whitened latent Gaussian component on a fixed embedding torus. The torus
// size is chosen once (non-strict embedding) so the noise dimension stays
// constant while (sigma, phi) move.
struct LatentComponent {
  ExpCovParams params;
  std::unique_ptr<CirculantEmbedding> emb;
  std::vector<double> gamma;
  std::vector<double> field;  // zero-mean, full grid array
  double prior_mean_lsig = 0.0, prior_mean_lphi = 0.0;

  void rebuild(const GridSpec& grid) {
    emb = std::make_unique<CirculantEmbedding>(params, grid, /*strict=*/false);
    if (gamma.empty()) gamma.assign(emb->noise_dim(), 0.0);
    field = emb->field_from_noise(gamma);
  }
};

struct LgcpSampler {
  // Problem setup
  GridSpec grid;
  std::vector<std::size_t> cells;
  double cell_area;
  std::vector<std::vector<long>> counts;   // per process, over masked cells
  std::vector<double> design;              // masked rows x ncov
  std::size_t ncov = 1;
  int processes = 1;
  int sign = 1;
  McmcConfig cfg;

  // State
  std::vector<std::vector<double>> beta;
  std::vector<LatentComponent> comps;
  Rng rng;

  // Caches
  std::vector<std::vector<double>> loglam;  // per process, masked cells
  double loglik = 0.0;

  StepAdapter latent_adapt, beta_adapt;
  std::vector<StepAdapter> cov_adapt;
  bool adapting = true;

  std::map<std::string, std::pair<long, long>> accept_counts;

  LgcpSampler(const McmcConfig& config, const GridSpec& g, int n_proc, int s)
      : grid(g),
        cells(g.masked_cells()),
        cell_area(g.cell_area()),
        processes(n_proc),
        sign(s),
        cfg(config),
        rng(config.seed),
        latent_adapt(config.latent_step, config.target_accept_langevin),
        beta_adapt(config.beta_step, config.target_accept_langevin) {}

  // Component weight in process j: e_1 = W_1 + W, e_2 = W_2 + sign W.
  double weight(int comp, int proc) const {
    if (processes == 1) return comp == 0 ? 1.0 : 0.0;
    if (comp == 2) return proc == 0 ? 1.0 : static_cast<double>(sign);
    return comp == proc ? 1.0 : 0.0;
  }

  double process_mean(int proc) const {
    double var = 0.0;
    for (std::size_t k = 0; k < comps.size(); ++k)
      if (weight(static_cast<int>(k), proc) != 0.0)
        var += comps[k].params.sigma * comps[k].params.sigma;
    return -0.5 * var;
  }

  void refresh_loglam() {
    loglam.assign(processes, std::vector<double>(cells.size(), 0.0));
    for (int j = 0; j < processes; ++j) {
      const double mu = process_mean(j);
      for (std::size_t r = 0; r < cells.size(); ++r) {
        double v = mu;
        for (std::size_t col = 0; col < ncov; ++col)
          v += design[r * ncov + col] * beta[j][col];
        for (std::size_t k = 0; k < comps.size(); ++k) {
          const double wk = weight(static_cast<int>(k), j);
          if (wk != 0.0) v += wk * comps[k].field[cells[r]];
        }
        loglam[j][r] = v;
      }
    }
    loglik = compute_loglik(loglam);
  }

  double compute_loglik(const std::vector<std::vector<double>>& ll) const {
    if (cfg.likelihood_off) return 0.0;
    double acc = 0.0;
    for (int j = 0; j < processes; ++j)
      acc += riemann_loglik(counts[j], ll[j], cell_area);
    return acc;
  }

  // d loglik / d loglam, per process over masked cells.
  std::vector<std::vector<double>> loglik_grad(
      const std::vector<std::vector<double>>& ll) const {
    std::vector<std::vector<double>> g(processes,
                                       std::vector<double>(cells.size(), 0.0));
    if (cfg.likelihood_off) return g;
    for (int j = 0; j < processes; ++j)
      for (std::size_t r = 0; r < cells.size(); ++r)
        g[j][r] = static_cast<double>(counts[j][r]) -
                  std::exp(ll[j][r]) * cell_area;
    return g;
  }

  double gamma_sq(const std::vector<std::vector<double>>& gammas) const {
    double s = 0.0;
    for (const auto& g : gammas)
      for (double v : g) s += v * v;
    return s;
  }

  double beta_prior(const std::vector<std::vector<double>>& b) const {
    double s = 0.0;
    for (const auto& bj : b)
      for (double v : bj) s += v * v;
    return -0.5 * s / cfg.beta_prior_var;
  }

  double cov_prior() const {
    double s = 0.0;
    for (const auto& c : comps) {
      const double dls = std::log(c.params.sigma) - c.prior_mean_lsig;
      const double dlp = std::log(c.params.phi) - c.prior_mean_lphi;
      s += -0.5 * dls * dls / cfg.log_sigma_prior_var -
           0.5 * dlp * dlp / cfg.log_phi_prior_var;
    }
    return s;
  }

  void record(const std::string& key, bool accepted) {
    auto& entry = accept_counts[key];
    ++entry.second;
    if (accepted) ++entry.first;
  }

  // ---- latent MALA over the concatenated whitened noise ----

  std::vector<std::vector<double>> latent_grad(
      const std::vector<std::vector<double>>& gammas,
      const std::vector<std::vector<double>>& ll) {
    const auto dg = loglik_grad(ll);
    std::vector<std::vector<double>> grad(comps.size());
    for (std::size_t k = 0; k < comps.size(); ++k) {
      std::vector<double> full(grid.cell_count(), 0.0);
      for (int j = 0; j < processes; ++j) {
        const double wk = weight(static_cast<int>(k), j);
        if (wk == 0.0) continue;
        for (std::size_t r = 0; r < cells.size(); ++r)
          full[cells[r]] += wk * dg[j][r];
      }
      grad[k] = comps[k].emb->noise_gradient(full);
      for (std::size_t i = 0; i < grad[k].size(); ++i)
        grad[k][i] -= gammas[k][i];
    }
    return grad;
  }

  std::vector<std::vector<double>> loglam_for(
      const std::vector<std::vector<double>>& fields) const {
    std::vector<std::vector<double>> ll(processes,
                                        std::vector<double>(cells.size()));
    for (int j = 0; j < processes; ++j) {
      const double mu = process_mean(j);
      for (std::size_t r = 0; r < cells.size(); ++r) {
        double v = mu;
        for (std::size_t col = 0; col < ncov; ++col)
          v += design[r * ncov + col] * beta[j][col];
        for (std::size_t k = 0; k < comps.size(); ++k) {
          const double wk = weight(static_cast<int>(k), j);
          if (wk != 0.0) v += wk * fields[k][cells[r]];
        }
        ll[j][r] = v;
      }
    }
    return ll;
  }

  void update_latent() {
    const double eps = latent_adapt.step();
    std::vector<std::vector<double>> cur_gamma(comps.size());
    for (std::size_t k = 0; k < comps.size(); ++k) cur_gamma[k] = comps[k].gamma;
    const auto grad = latent_grad(cur_gamma, loglam);

    std::vector<std::vector<double>> prop_gamma(comps.size());
    for (std::size_t k = 0; k < comps.size(); ++k) {
      prop_gamma[k].resize(cur_gamma[k].size());
      for (std::size_t i = 0; i < cur_gamma[k].size(); ++i)
        prop_gamma[k][i] = cur_gamma[k][i] + 0.5 * eps * eps * grad[k][i] +
                           eps * rng.normal();
    }
    std::vector<std::vector<double>> prop_field(comps.size());
    for (std::size_t k = 0; k < comps.size(); ++k)
      prop_field[k] = comps[k].emb->field_from_noise(prop_gamma[k]);
    const auto prop_ll = loglam_for(prop_field);
    const double prop_loglik = compute_loglik(prop_ll);
    const auto prop_grad = latent_grad(prop_gamma, prop_ll);

    // q(a|b) = N(a; b + eps^2/2 grad(b), eps^2 I)
    double q_fwd = 0.0, q_back = 0.0;
    for (std::size_t k = 0; k < comps.size(); ++k)
      for (std::size_t i = 0; i < cur_gamma[k].size(); ++i) {
        const double f = prop_gamma[k][i] - cur_gamma[k][i] -
                         0.5 * eps * eps * grad[k][i];
        const double b = cur_gamma[k][i] - prop_gamma[k][i] -
                         0.5 * eps * eps * prop_grad[k][i];
        q_fwd += f * f;
        q_back += b * b;
      }
    const double log_alpha = (prop_loglik - 0.5 * gamma_sq(prop_gamma)) -
                             (loglik - 0.5 * gamma_sq(cur_gamma)) +
                             (-0.5 * q_back / (eps * eps)) -
                             (-0.5 * q_fwd / (eps * eps));
    const bool accept = std::log(rng.uniform_pos()) < log_alpha;
    if (accept) {
      for (std::size_t k = 0; k < comps.size(); ++k) {
        comps[k].gamma = std::move(prop_gamma[k]);
        comps[k].field = std::move(prop_field[k]);
      }
      loglam = prop_ll;
      loglik = prop_loglik;
    }
    record("latent", accept);
    if (adapting)
      latent_adapt.update(std::min(1.0, std::exp(std::min(0.0, log_alpha))));
  }

  // ---- MALA on the coefficients ----

  std::vector<std::vector<double>> beta_grad(
      const std::vector<std::vector<double>>& b,
      const std::vector<std::vector<double>>& ll) const {
    std::vector<std::vector<double>> g(processes,
                                       std::vector<double>(ncov, 0.0));
    const auto dg = loglik_grad(ll);
    for (int j = 0; j < processes; ++j) {
      for (std::size_t r = 0; r < cells.size(); ++r)
        for (std::size_t col = 0; col < ncov; ++col)
          g[j][col] += design[r * ncov + col] * dg[j][r];
      for (std::size_t col = 0; col < ncov; ++col)
        g[j][col] -= b[j][col] / cfg.beta_prior_var;
    }
    return g;
  }

  std::vector<std::vector<double>> loglam_for_beta(
      const std::vector<std::vector<double>>& b) const {
    std::vector<std::vector<double>> ll = loglam;
    for (int j = 0; j < processes; ++j)
      for (std::size_t r = 0; r < cells.size(); ++r) {
        double delta = 0.0;
        for (std::size_t col = 0; col < ncov; ++col)
          delta += design[r * ncov + col] * (b[j][col] - beta[j][col]);
        ll[j][r] += delta;
      }
    return ll;
  }

  void update_beta() {
    const double eps = beta_adapt.step();
    const auto grad = beta_grad(beta, loglam);
    std::vector<std::vector<double>> prop(processes,
                                          std::vector<double>(ncov));
    for (int j = 0; j < processes; ++j)
      for (std::size_t col = 0; col < ncov; ++col)
        prop[j][col] = beta[j][col] + 0.5 * eps * eps * grad[j][col] +
                       eps * rng.normal();
    const auto prop_ll = loglam_for_beta(prop);
    const double prop_loglik = compute_loglik(prop_ll);
    const auto prop_grad = beta_grad(prop, prop_ll);
    double q_fwd = 0.0, q_back = 0.0;
    for (int j = 0; j < processes; ++j)
      for (std::size_t col = 0; col < ncov; ++col) {
        const double f =
            prop[j][col] - beta[j][col] - 0.5 * eps * eps * grad[j][col];
        const double b =
            beta[j][col] - prop[j][col] - 0.5 * eps * eps * prop_grad[j][col];
        q_fwd += f * f;
        q_back += b * b;
      }
    const double log_alpha = (prop_loglik + beta_prior(prop)) -
                             (loglik + beta_prior(beta)) +
                             (-0.5 * q_back / (eps * eps)) -
                             (-0.5 * q_fwd / (eps * eps));
    const bool accept = std::log(rng.uniform_pos()) < log_alpha;
    if (accept) {
      beta = prop;
      loglam = prop_ll;
      loglik = prop_loglik;
    }
    record("beta", accept);
    if (adapting)
      beta_adapt.update(std::min(1.0, std::exp(std::min(0.0, log_alpha))));
  }

  // ---- joint random-walk Metropolis on (log sigma, log phi) per component ----

  void update_cov(std::size_t k) {
    LatentComponent& comp = comps[k];
    const double step = cov_adapt[k].step();
    const double cur_lsig = std::log(comp.params.sigma);
    const double cur_lphi = std::log(comp.params.phi);
    const double prop_lsig = cur_lsig + step * rng.normal();
    const double prop_lphi = cur_lphi + step * rng.normal();

    const ExpCovParams cur_params = comp.params;
    auto cur_emb = std::move(comp.emb);
    auto cur_field = comp.field;

    comp.params = {std::exp(prop_lsig), std::exp(prop_lphi)};
    const double cur_prior = cov_prior_component(cur_lsig, cur_lphi, comp);
    const double prop_prior = cov_prior_component(prop_lsig, prop_lphi, comp);
    comp.rebuild(grid);
    std::vector<std::vector<double>> fields(comps.size());
    for (std::size_t i = 0; i < comps.size(); ++i) fields[i] = comps[i].field;
    const auto prop_ll = loglam_for(fields);
    const double prop_loglik = compute_loglik(prop_ll);

    const double log_alpha =
        (prop_loglik + prop_prior) - (loglik + cur_prior);
    const bool accept = std::log(rng.uniform_pos()) < log_alpha;
    if (accept) {
      loglam = prop_ll;
      loglik = prop_loglik;
    } else {
      comp.params = cur_params;
      comp.emb = std::move(cur_emb);
      comp.field = std::move(cur_field);
    }
    record("cov" + std::to_string(k), accept);
    if (adapting)
      cov_adapt[k].update(std::min(1.0, std::exp(std::min(0.0, log_alpha))));
  }

  double cov_prior_component(double lsig, double lphi,
                             const LatentComponent& comp) const {
    const double ds = lsig - comp.prior_mean_lsig;
    const double dp = lphi - comp.prior_mean_lphi;
    return -0.5 * ds * ds / cfg.log_sigma_prior_var -
           0.5 * dp * dp / cfg.log_phi_prior_var;
  }

  void iterate() {
    update_latent();
    update_beta();
    for (std::size_t k = 0; k < comps.size(); ++k) update_cov(k);
  }

  PosteriorSamples run() {
    refresh_loglam();
    if (!std::isfinite(loglik))
      throw std::runtime_error("MCMC: non-finite posterior at initialization");

    PosteriorSamples out;
    out.processes = processes;
    out.sign = sign;
    out.grid = grid;
    if (cfg.mcm_phi_hint > 0.0 &&
        (grid.dx > cfg.mcm_phi_hint || grid.dy > cfg.mcm_phi_hint))
      out.warnings.push_back(
          "grid cell width exceeds the MCM range estimate; refine the grid");

    adapting = true;
    for (long it = 0; it < cfg.burn_in; ++it) iterate();
    adapting = false;  // freeze adaptation to preserve detailed balance

    std::vector<std::vector<double>> lat_m, lat_s;
    if (cfg.store_latent) {
      lat_m.assign(processes, std::vector<double>(grid.cell_count(), 0.0));
      lat_s.assign(processes, std::vector<double>(grid.cell_count(), 0.0));
    }
    for (int s = 0; s < cfg.n_samples; ++s) {
      for (long t = 0; t < cfg.thin; ++t) iterate();
      ParamDraw d;
      d.beta = beta;
      for (const auto& c : comps) {
        d.sigma.push_back(c.params.sigma);
        d.phi.push_back(c.params.phi);
      }
      out.draws.push_back(std::move(d));
      if (cfg.store_latent) {
        for (int j = 0; j < processes; ++j) {
          const double mu = process_mean(j);
          for (std::size_t c = 0; c < grid.cell_count(); ++c) {
            double e = mu;
            for (std::size_t k = 0; k < comps.size(); ++k) {
              const double wk = weight(static_cast<int>(k), j);
              if (wk != 0.0) e += wk * comps[k].field[c];
            }
            // Welford over retained draws
            const double delta = e - lat_m[j][c];
            lat_m[j][c] += delta / (s + 1);
            lat_s[j][c] += delta * (e - lat_m[j][c]);
          }
        }
      }
    }
    if (cfg.store_latent) {
      out.latent_mean = lat_m;
      out.latent_sd.assign(processes,
                           std::vector<double>(grid.cell_count(), 0.0));
      for (int j = 0; j < processes; ++j)
        for (std::size_t c = 0; c < grid.cell_count(); ++c)
          out.latent_sd[j][c] =
              cfg.n_samples > 1
                  ? std::sqrt(lat_s[j][c] / (cfg.n_samples - 1))
                  : 0.0;
    }
    for (const auto& [key, counts_pair] : accept_counts)
      out.acceptance[key] =
          counts_pair.second > 0
              ? static_cast<double>(counts_pair.first) / counts_pair.second
              : 0.0;
    return out;
  }
};

inline std::vector<long> masked_counts(const PointPattern& pp,
                                       const GridSpec& grid) {
  const auto full = bin_to_grid(pp, grid);
  const auto cells = grid.masked_cells();
  std::vector<long> out(cells.size());
  for (std::size_t r = 0; r < cells.size(); ++r) out[r] = full[cells[r]];
  return out;
}

inline void setup_design(LgcpSampler& s,
                         std::shared_ptr<const CovariateStack> covariates) {
  if (covariates) {
    if (!covariates->grid.same_shape(s.grid))
      throw std::invalid_argument("fit: covariate grid mismatch");
    const DesignMatrix dm = design_matrix(*covariates);
    s.design = dm.values;
    s.ncov = dm.ncols;
  } else {
    s.design.assign(s.cells.size(), 1.0);
    s.ncov = 1;
  }
}

inline double prior_mean_at(const std::vector<double>& means, std::size_t k,
                            const char* what) {
  if (means.empty())
    throw std::invalid_argument(std::string("McmcConfig: empty ") + what);
  if (means.size() == 1) return means[0];
  if (k >= means.size())
    throw std::invalid_argument(std::string("McmcConfig: need a ") + what +
                                " per latent component");
  return means[k];
}

inline void init_components(LgcpSampler& s, std::size_t n_comp) {
  s.comps.resize(n_comp);
  for (std::size_t k = 0; k < n_comp; ++k) {
    auto& c = s.comps[k];
    c.prior_mean_lsig =
        prior_mean_at(s.cfg.log_sigma_prior_mean, k, "log-sigma prior mean");
    c.prior_mean_lphi =
        prior_mean_at(s.cfg.log_phi_prior_mean, k, "log-phi prior mean");
    c.params = {std::exp(c.prior_mean_lsig), std::exp(c.prior_mean_lphi)};
    c.rebuild(s.grid);
    s.cov_adapt.emplace_back(s.cfg.cov_step, s.cfg.target_accept_rw);
  }
}

inline void init_beta(LgcpSampler& s, const std::vector<std::size_t>& n_points) {
  s.beta.assign(s.processes, std::vector<double>(s.ncov, 0.0));
  const double area = s.grid.masked_area();
  for (int j = 0; j < s.processes; ++j)
    s.beta[j][0] =
        std::log(std::max<double>(static_cast<double>(n_points[j]), 1.0) / area);
}

}  // namespace detail

// Bayesian MCMC for the univariate LGCP: MALA on the whitened latent field
// and the coefficients, joint random-walk Metropolis on (log sigma, log phi).
inline PosteriorSamples fit_univariate(
    const PointPattern& pp, std::shared_ptr<const CovariateStack> covariates,
    const GridSpec& grid, const McmcConfig& config) {
  config.validate();
  if (!pp.simple) throw std::invalid_argument("fit_univariate: pattern must be simple");
  detail::LgcpSampler s(config, grid, 1, +1);
  detail::setup_design(s, std::move(covariates));
  s.counts.push_back(detail::masked_counts(pp, grid));
  detail::init_components(s, 1);
  detail::init_beta(s, {pp.size()});
  return s.run();
}

// Bivariate fit with the signed LMC; three latent components (W1, W2, W)
// share the whitened representation, and the two Riemann likelihood terms
// share W through the fixed sign.
inline PosteriorSamples fit_bivariate(
    const PointPattern& pp1, const PointPattern& pp2,
    std::shared_ptr<const CovariateStack> covariates, const GridSpec& grid,
    int sign, const McmcConfig& config) {
  config.validate();
  if (sign != 1 && sign != -1)
    throw std::invalid_argument("fit_bivariate: sign must be +1 or -1");
  if (!pp1.simple || !pp2.simple)
    throw std::invalid_argument("fit_bivariate: patterns must be simple");
  detail::LgcpSampler s(config, grid, 2, sign);
  detail::setup_design(s, std::move(covariates));
  s.counts.push_back(detail::masked_counts(pp1, grid));
  s.counts.push_back(detail::masked_counts(pp2, grid));
  detail::init_components(s, 3);
  detail::init_beta(s, {pp1.size(), pp2.size()});
  return s.run();
}

// Pointwise posterior band of a correlation curve.
struct CurveBand {
  std::string name;
  std::vector<double> r, median, lo, hi;
};

namespace detail {

inline CurveBand band_from_draws(
    const std::string& name, std::span<const double> radii,
    const std::vector<std::vector<double>>& per_draw_curves) {
  CurveBand band;
  band.name = name;
  band.r.assign(radii.begin(), radii.end());
  const std::size_t m = radii.size();
  band.median.resize(m);
  band.lo.resize(m);
  band.hi.resize(m);
  std::vector<double> column(per_draw_curves.size());
  for (std::size_t b = 0; b < m; ++b) {
    for (std::size_t t = 0; t < per_draw_curves.size(); ++t)
      column[t] = per_draw_curves[t][b];
    band.median[b] = quantile_nearest(column, 0.5);
    band.lo[b] = quantile_nearest(column, 0.025);
    band.hi[b] = quantile_nearest(column, 0.975);
  }
  return band;
}

}  // namespace detail

// Per-draw correlation functions of the log-intensity over a radius ladder,
// reduced to pointwise median and 95% band. Univariate samples yield one
// curve; bivariate samples yield both marginals and the cross-correlation.
inline std::vector<CurveBand> posterior_correlation_curves(
    const PosteriorSamples& samples, std::span<const double> radii) {
  if (samples.draws.empty())
    throw std::invalid_argument("posterior_correlation_curves: no draws");
  std::vector<CurveBand> out;
  const std::size_t n = samples.draws.size();
  if (samples.processes == 1) {
    std::vector<std::vector<double>> curves(n,
                                            std::vector<double>(radii.size()));
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t b = 0; b < radii.size(); ++b)
        curves[t][b] = exp_correlation(radii[b], samples.draws[t].phi[0]);
    out.push_back(detail::band_from_draws("corr_log_intensity", radii, curves));
    return out;
  }
  for (int j = 1; j <= 2; ++j) {
    std::vector<std::vector<double>> curves(n,
                                            std::vector<double>(radii.size()));
    for (std::size_t t = 0; t < n; ++t) {
      const LmcParams p = samples.lmc_at(t);
      for (std::size_t b = 0; b < radii.size(); ++b)
        curves[t][b] = marginal_corr_e(radii[b], p, j);
    }
    out.push_back(detail::band_from_draws(
        "marginal_corr_" + std::to_string(j), radii, curves));
  }
  std::vector<std::vector<double>> cross(n, std::vector<double>(radii.size()));
  for (std::size_t t = 0; t < n; ++t) {
    const LmcParams p = samples.lmc_at(t);
    for (std::size_t b = 0; b < radii.size(); ++b)
      cross[t][b] = cross_corr_e(radii[b], p);
  }
  out.push_back(detail::band_from_draws("cross_corr", radii, cross));
  return out;
}

// Median intensity ratio between two fitted models, with significance flags
// where the 99% interval of per-draw ratios excludes 1 ('+' above, 'x'
// below). Draw t on both sides shares the same component noise, so equal
// samples and models give a ratio of exactly 1.
struct RatioMap {
  GridSpec grid;
  std::vector<double> median;
  std::vector<char> flag;  // ' ', '+', 'x' per cell
};

inline std::vector<RatioMap> intensity_ratio_map(
    const PosteriorSamples& samples_a, const LgcpModel& model_a,
    const PosteriorSamples& samples_b, const LgcpModel& model_b, int n_sim,
    std::uint64_t seed) {
  if (samples_a.processes != samples_b.processes)
    throw std::invalid_argument("intensity_ratio_map: process count mismatch");
  if (!model_a.grid.same_shape(model_b.grid))
    throw std::invalid_argument("intensity_ratio_map: grid mismatch");
  if (n_sim < 1) throw std::invalid_argument("intensity_ratio_map: n_sim >= 1");
  const GridSpec& grid = model_a.grid;
  const int processes = samples_a.processes;
  const std::size_t ncell = grid.cell_count();
  const std::size_t n_comp = processes == 1 ? 1 : 3;

  // ratios[j][c][t]
  std::vector<std::vector<std::vector<double>>> ratios(
      processes, std::vector<std::vector<double>>(
                     ncell, std::vector<double>(n_sim, 1.0)));
  const Rng base(seed);
  parallel_for(static_cast<std::size_t>(n_sim), [&](std::size_t t) {
    Rng rng = base.substream(t);
    const ParamDraw& da = samples_a.draws[t % samples_a.draws.size()];
    const ParamDraw& db = samples_b.draws[t % samples_b.draws.size()];

    // Shared standard-normal noise per component; each side applies its own
    // covariance square root.
    auto fields_for = [&grid](const ParamDraw& d,
                              const std::vector<std::vector<double>>& noise,
                              int processes_, int sign) {
      std::vector<std::vector<double>> e(processes_);
      std::vector<std::vector<double>> comp(noise.size());
      for (std::size_t k = 0; k < noise.size(); ++k) {
        const ExpCovParams p{d.sigma[k], d.phi[k]};
        if (p.sigma == 0.0) {
          comp[k].assign(grid.cell_count(), 0.0);
          continue;
        }
        const CirculantEmbedding emb(p, grid, /*strict=*/false);
        comp[k] = emb.field_from_noise(noise[k]);
      }
      for (int j = 0; j < processes_; ++j) {
        e[j].assign(grid.cell_count(), 0.0);
        double var = 0.0;
        for (std::size_t k = 0; k < noise.size(); ++k) {
          double wk;
          if (noise.size() == 1) wk = 1.0;
          else if (k == 2) wk = j == 0 ? 1.0 : sign;
          else wk = (static_cast<int>(k) == j) ? 1.0 : 0.0;
          if (wk == 0.0) continue;
          var += d.sigma[k] * d.sigma[k];
          for (std::size_t c = 0; c < grid.cell_count(); ++c)
            e[j][c] += wk * comp[k][c];
        }
        for (std::size_t c = 0; c < grid.cell_count(); ++c)
          e[j][c] -= 0.5 * var;
      }
      return e;
    };

    // Noise dimension is a function of the grid alone (fixed base torus).
    std::vector<std::vector<double>> noise(n_comp);
    for (auto& nk : noise) {
      nk.resize(CirculantEmbedding::base_noise_dim(grid));
      for (double& v : nk) v = rng.normal();
    }
    const auto ea = fields_for(da, noise, processes, samples_a.sign);
    const auto eb = fields_for(db, noise, processes, samples_b.sign);
    for (int j = 0; j < processes; ++j) {
      const auto la = detail::log_mean_intensity(
          LgcpModel{{da.beta[j]}, ExpCovParams{}, {}, model_a.covariates,
                    model_a.grid},
          0);
      const auto lb = detail::log_mean_intensity(
          LgcpModel{{db.beta[j]}, ExpCovParams{}, {}, model_b.covariates,
                    model_b.grid},
          0);
      for (std::size_t c = 0; c < ncell; ++c) {
        if (!grid.mask[c]) continue;
        ratios[j][c][t] =
            std::exp(la[c] + ea[j][c] - lb[c] - eb[j][c]);
      }
    }
  });

  std::vector<RatioMap> out(processes);
  for (int j = 0; j < processes; ++j) {
    out[j].grid = grid;
    out[j].median.assign(ncell, 1.0);
    out[j].flag.assign(ncell, ' ');
    for (std::size_t c = 0; c < ncell; ++c) {
      if (!grid.mask[c]) continue;
      out[j].median[c] = detail::quantile_nearest(ratios[j][c], 0.5);
      const double lo = detail::quantile_nearest(ratios[j][c], 0.005);
      const double hi = detail::quantile_nearest(ratios[j][c], 0.995);
      if (lo > 1.0) out[j].flag[c] = '+';
      else if (hi < 1.0) out[j].flag[c] = 'x';
    }
  }
  return out;
}

// Fitted cross-K envelope: for n_sim posterior draws, simulate a bivariate
// pattern from the drawn parameters and compute its cross-K with kernel
// re-estimated intensities (processed like the empirical curve).
inline KResult fitted_cross_k(const PosteriorSamples& samples,
                              const LgcpModel& model,
                              std::shared_ptr<const Window> window,
                              int n_sim, std::span<const double> radii,
                              std::uint64_t seed) {
  if (samples.processes != 2)
    throw std::invalid_argument("fitted_cross_k: bivariate samples required");
  if (n_sim < 2) throw std::invalid_argument("fitted_cross_k: n_sim >= 2");
  Envelope env;
  env.r.assign(radii.begin(), radii.end());
  env.level = 0.95;
  env.n_sim = n_sim;
  env.curves.assign(n_sim, {});
  const Rng base(seed);
  parallel_for(static_cast<std::size_t>(n_sim), [&](std::size_t t) {
    const ParamDraw& d = samples.draws[t % samples.draws.size()];
    LgcpModel m = model;
    m.beta = d.beta;
    m.lmc = samples.lmc_at(t % samples.draws.size());
    m.cov.reset();
    const auto sim = simulate_bivariate_lgcp(m, window,
                                             base.substream(t).seed());
    if (sim.pattern1.size() < 2 || sim.pattern2.size() < 2) {
      env.curves[t].assign(radii.size(), 0.0);
      return;
    }
    const double h1 = default_bandwidth(sim.pattern1);
    const double h2 = default_bandwidth(sim.pattern2);
    const auto l1 = loo_intensity(sim.pattern1, h1, model.grid);
    const auto l2 = loo_intensity(sim.pattern2, h2, model.grid);
    env.curves[t] = cross_k_inhom(sim.pattern1, sim.pattern2, l1, l2, radii);
  });
  detail::summarize_envelope(env);
  return env.to_kresult({}, KResult::Cross);
}

}  // namespace ppkit
