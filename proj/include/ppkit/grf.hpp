#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ppkit/fft.hpp"
#include "ppkit/geom.hpp"
#include "ppkit/random.hpp"

namespace ppkit {

// Exponential covariance: C(h) = sigma^2 exp(-h / phi). The latent field
// mean is fixed at -sigma^2/2 so that E[exp(e)] = 1.
struct ExpCovParams {
  double sigma = 1.0;
  double phi = 1.0;

  void validate() const {
    if (!(sigma >= 0.0)) throw std::invalid_argument("ExpCovParams: sigma >= 0");
    if (!(phi > 0.0)) throw std::invalid_argument("ExpCovParams: phi > 0");
  }

  double mean() const { return -0.5 * sigma * sigma; }
};

// Signed linear model of coregionalization: e1 = W1 + W, e2 = W2 + sign W.
struct LmcParams {
  ExpCovParams w1, w2, w;
  int sign = 1;

  void validate() const {
    w1.validate();
    w2.validate();
    w.validate();
    if (sign != 1 && sign != -1)
      throw std::invalid_argument("LmcParams: sign must be +1 or -1");
  }

  double marginal_var(int j) const {
    const ExpCovParams& m = j == 1 ? w1 : w2;
    return m.sigma * m.sigma + w.sigma * w.sigma;
  }

  double mean(int j) const { return -0.5 * marginal_var(j); }
};

inline double exp_correlation(double h, double phi) {
  if (!(phi > 0.0)) throw std::invalid_argument("exp_correlation: phi > 0");
  if (h < 0.0) throw std::invalid_argument("exp_correlation: h >= 0");
  return std::exp(-h / phi);
}

inline double cov_e(double h, const ExpCovParams& p) {
  p.validate();
  return p.sigma * p.sigma * exp_correlation(h, p.phi);
}

// Corr{Lambda(s), Lambda(u)} = (exp{C(h)} - 1) / (exp(sigma^2) - 1).
inline double lambda_corr(double h, const ExpCovParams& p) {
  p.validate();
  if (!(p.sigma > 0.0))
    throw std::invalid_argument("lambda_corr: undefined at sigma = 0");
  return std::expm1(cov_e(h, p)) / std::expm1(p.sigma * p.sigma);
}

// Cov{Lambda(s), Lambda(u)} = mean_s mean_u (exp{C(h)} - 1).
inline double lambda_cov(double s_mean, double u_mean, double h,
                         const ExpCovParams& p) {
  p.validate();
  if (!(s_mean > 0.0) || !(u_mean > 0.0))
    throw std::invalid_argument("lambda_cov: means must be > 0");
  return s_mean * u_mean * std::expm1(cov_e(h, p));
}

inline double cross_cov_e(double h, const LmcParams& p) {
  p.validate();
  return p.sign * p.w.sigma * p.w.sigma * exp_correlation(h, p.w.phi);
}

inline double cross_corr_e(double h, const LmcParams& p) {
  p.validate();
  const double denom = std::sqrt(p.marginal_var(1) * p.marginal_var(2));
  if (!(denom > 0.0))
    throw std::invalid_argument("cross_corr_e: degenerate variances");
  return cross_cov_e(h, p) / denom;
}

// Corr{Lambda_1(s), Lambda_2(u)} with marginal sigma_j^2 = sigma_Wj^2 + sigma_W^2.
inline double cross_corr_lambda(double h, const LmcParams& p) {
  p.validate();
  const double v1 = p.marginal_var(1), v2 = p.marginal_var(2);
  if (!(v1 > 0.0) || !(v2 > 0.0))
    throw std::invalid_argument("cross_corr_lambda: degenerate variances");
  return std::expm1(cross_cov_e(h, p)) /
         std::sqrt(std::expm1(v1) * std::expm1(v2));
}

// Marginal Cov{e_j(s), e_j(u)} = sigma_Wj^2 rho_Wj(h) + sigma_W^2 rho_W(h);
// the common component enters squared, so this is sign-independent.
inline double marginal_cov_e(double h, const LmcParams& p, int j) {
  p.validate();
  if (j != 1 && j != 2) throw std::invalid_argument("marginal_cov_e: j in {1,2}");
  const ExpCovParams& m = j == 1 ? p.w1 : p.w2;
  double own = m.sigma > 0.0 ? cov_e(h, m) : 0.0;
  double shared = p.w.sigma > 0.0 ? cov_e(h, p.w) : 0.0;
  return own + shared;
}

inline double marginal_corr_e(double h, const LmcParams& p, int j) {
  const double v = p.marginal_var(j);
  if (!(v > 0.0))
    throw std::invalid_argument("marginal_corr_e: degenerate variance");
  return marginal_cov_e(h, p, j) / v;
}

// One stationary-field realization on a grid.
struct FieldSample {
  GridSpec grid;
  std::vector<double> values;  // full grid array, mean included
  double mean = 0.0;
  std::optional<ExpCovParams> params;
  std::uint64_t seed = 0;
};

namespace detail {

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace detail

// Circulant embedding of the exponential covariance on an expanded
// 2^m x 2^n torus. Sampling and the whitened-noise map share this object:
//   field = Re BFFT( sqrt(eig / M) .* (a + i b) )   restricted to the grid,
// with a, b i.i.d. standard normal of torus size M = mx * my.
class CirculantEmbedding {
 public:
  // strict: negative eigenvalues beyond -tol * max trigger torus expansion
  // (up to 4x per axis) and then an error. Non-strict keeps the first torus
  // and clips, which fixes the latent dimension for MCMC.
  CirculantEmbedding(const ExpCovParams& params, const GridSpec& grid,
                     bool strict = true, double tol = 1e-9)
      : params_(params), nx_(grid.nx), ny_(grid.ny), dx_(grid.dx), dy_(grid.dy) {
    params.validate();
    const int bx = detail::next_pow2(2 * nx_);
    const int by = detail::next_pow2(2 * ny_);
    const int max_expand = strict ? 3 : 1;
    for (int k = 0; k < max_expand; ++k) {
      mx_ = bx << k;
      my_ = by << k;
      if (build(tol) || !strict) return;
    }
    throw std::runtime_error(
        "CirculantEmbedding: not positive definite within tolerance after 4x "
        "expansion");
  }

  int mx() const { return mx_; }
  int my() const { return my_; }
  std::size_t torus_size() const { return static_cast<std::size_t>(mx_) * my_; }
  std::size_t noise_dim() const { return 2 * torus_size(); }
  double clipped_fraction() const { return clipped_fraction_; }

  // Noise dimension of the unexpanded (non-strict) torus for this grid;
  // independent of the covariance parameters.
  static std::size_t base_noise_dim(const GridSpec& grid) {
    return 2 * static_cast<std::size_t>(detail::next_pow2(2 * grid.nx)) *
           detail::next_pow2(2 * grid.ny);
  }

  // Zero-mean field on the nx x ny grid from standard-normal noise gamma,
  // laid out as [a_0..a_{M-1}, b_0..b_{M-1}].
  std::vector<double> field_from_noise(std::span<const double> gamma) const {
    if (gamma.size() != noise_dim())
      throw std::invalid_argument("field_from_noise: noise size mismatch");
    const std::size_t m = torus_size();
    std::vector<std::complex<double>> buf(m);
    for (std::size_t l = 0; l < m; ++l)
      buf[l] = sqrt_eig_[l] * std::complex<double>(gamma[l], gamma[m + l]);
    detail::fft2_inplace(buf, my_, mx_, +1);
    std::vector<double> out(static_cast<std::size_t>(nx_) * ny_);
    for (int iy = 0; iy < ny_; ++iy)
      for (int ix = 0; ix < nx_; ++ix)
        out[static_cast<std::size_t>(iy) * nx_ + ix] =
            buf[static_cast<std::size_t>(iy) * mx_ + ix].real();
    return out;
  }

  // Adjoint of field_from_noise: maps a per-cell gradient (full nx x ny
  // array) to the gradient with respect to gamma. One FFT.
  std::vector<double> noise_gradient(std::span<const double> grid_grad) const {
    if (grid_grad.size() != static_cast<std::size_t>(nx_) * ny_)
      throw std::invalid_argument("noise_gradient: grid size mismatch");
    const std::size_t m = torus_size();
    std::vector<std::complex<double>> buf(m, {0.0, 0.0});
    for (int iy = 0; iy < ny_; ++iy)
      for (int ix = 0; ix < nx_; ++ix)
        buf[static_cast<std::size_t>(iy) * mx_ + ix] =
            grid_grad[static_cast<std::size_t>(iy) * nx_ + ix];
    detail::fft2_inplace(buf, my_, mx_, +1);
    std::vector<double> out(noise_dim());
    for (std::size_t l = 0; l < m; ++l) {
      out[l] = sqrt_eig_[l] * buf[l].real();
      out[m + l] = -sqrt_eig_[l] * buf[l].imag();
    }
    return out;
  }

  std::vector<double> draw_noise(Rng& rng) const {
    std::vector<double> gamma(noise_dim());
    for (double& g : gamma) g = rng.normal();
    return gamma;
  }

 private:
  // Returns true when all eigenvalues are >= -tol * max; always stores the
  // clipped square roots combined with the 1/sqrt(M) sampling factor.
  bool build(double tol) {
    const std::size_t m = torus_size();
    std::vector<std::complex<double>> cov(m);
    const double s2 = params_.sigma * params_.sigma;
    for (int ty = 0; ty < my_; ++ty) {
      const double hy = std::min(ty, my_ - ty) * dy_;
      for (int tx = 0; tx < mx_; ++tx) {
        const double hx = std::min(tx, mx_ - tx) * dx_;
        cov[static_cast<std::size_t>(ty) * mx_ + tx] =
            s2 * std::exp(-std::hypot(hx, hy) / params_.phi);
      }
    }
    detail::fft2_inplace(cov, my_, mx_, -1);
    double max_eig = 0.0;
    for (const auto& c : cov) max_eig = std::max(max_eig, c.real());
    double min_eig = 0.0;
    double clipped = 0.0, total = 0.0;
    sqrt_eig_.resize(m);
    const double scale = 1.0 / static_cast<double>(m);
    for (std::size_t l = 0; l < m; ++l) {
      const double eig = cov[l].real();
      min_eig = std::min(min_eig, eig);
      if (eig > 0.0) {
        total += eig;
        sqrt_eig_[l] = std::sqrt(eig * scale);
      } else {
        clipped += -eig;
        sqrt_eig_[l] = 0.0;
      }
    }
    clipped_fraction_ = total > 0.0 ? clipped / total : 0.0;
    return s2 == 0.0 || min_eig >= -tol * max_eig;
  }

  ExpCovParams params_;
  int nx_, ny_, mx_ = 0, my_ = 0;
  double dx_, dy_;
  std::vector<double> sqrt_eig_;
  double clipped_fraction_ = 0.0;
};

// One seeded draw of the stationary field with mean -sigma^2/2.
inline FieldSample simulate_field(const ExpCovParams& p, const GridSpec& grid,
                                  std::uint64_t seed) {
  p.validate();
  FieldSample out;
  out.grid = grid;
  out.mean = p.mean();
  out.params = p;
  out.seed = seed;
  if (p.sigma == 0.0) {
    out.values.assign(grid.cell_count(), 0.0);
    return out;
  }
  const CirculantEmbedding emb(p, grid);
  Rng rng(seed);
  const auto gamma = emb.draw_noise(rng);
  out.values = emb.field_from_noise(gamma);
  for (double& v : out.values) v += out.mean;
  return out;
}

struct LmcSample {
  FieldSample e1, e2;  // composed fields, means included
  FieldSample w;       // shared component (zero mean)
};

// Three independent draws composed as e1 = W1 + W, e2 = W2 + sign W, with
// means -(sigma_Wj^2 + sigma_W^2)/2 so that E[exp(e_j)] = 1.
inline LmcSample simulate_lmc(const LmcParams& p, const GridSpec& grid,
                              std::uint64_t seed) {
  p.validate();
  Rng base(seed);
  auto component = [&grid](const ExpCovParams& cp, Rng rng) {
    std::vector<double> v(grid.cell_count(), 0.0);
    if (cp.sigma > 0.0) {
      const CirculantEmbedding emb(cp, grid);
      const auto gamma = emb.draw_noise(rng);
      v = emb.field_from_noise(gamma);
    }
    return v;
  };
  const auto w1 = component(p.w1, base.substream(1));
  const auto w2 = component(p.w2, base.substream(2));
  const auto w = component(p.w, base.substream(3));

  LmcSample out;
  out.w.grid = grid;
  out.w.values = w;
  out.w.mean = 0.0;
  out.w.seed = seed;
  out.e1.grid = grid;
  out.e2.grid = grid;
  out.e1.mean = p.mean(1);
  out.e2.mean = p.mean(2);
  out.e1.seed = seed;
  out.e2.seed = seed;
  out.e1.values.resize(grid.cell_count());
  out.e2.values.resize(grid.cell_count());
  for (std::size_t c = 0; c < grid.cell_count(); ++c) {
    out.e1.values[c] = out.e1.mean + w1[c] + w[c];
    out.e2.values[c] = out.e2.mean + w2[c] + p.sign * w[c];
  }
  return out;
}

}  // namespace ppkit
