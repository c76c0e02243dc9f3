#pragma once

#include <cstdint>

#include "tprm/rng.hpp"

namespace tprm {

struct SelectHyper {
  double slab_var = 1e4;    // sigma^2
  double spike_var = 1e-4;  // epsilon
  double alpha0_pi = 0.5;   // bathtub Beta(1/2, 1/2)
  double alpha1_pi = 0.5;
  VectorXd gamma_prior_mean;  // gamma*, resized with zeros if left empty
  double nu0_upsilon = 1.0;
  double nu1_upsilon = 1.0;

  void validate() const {
    if (!(slab_var > spike_var && spike_var > 0))
      throw std::invalid_argument("select hyper: need slab_var > spike_var > 0");
    if (!(alpha0_pi > 0 && alpha1_pi > 0 && nu0_upsilon > 0 && nu1_upsilon > 0))
      throw std::invalid_argument("select hyper: Beta/Gamma parameters must be positive");
  }
};

/// Probit regression state under Chib augmentation with the normal mixture
/// prior on the feature coefficients.
struct RegressionState {
  VectorXd w;                         // latent normals, one per subject
  VectorXd coef;                      // b over features
  std::vector<std::uint8_t> include;  // delta indicators
  double pi = 0.5;
  VectorXd gamma;  // clinical coefficients
  double upsilon = 1.0;

  Index m() const { return coef.size(); }
};

inline RegressionState init_regression_state(Index n, Index m, Index q) {
  if (n < 1 || m < 1 || q < 0)
    throw std::invalid_argument("regression init: bad dimensions");
  RegressionState s;
  s.w = VectorXd::Zero(n);
  s.coef = VectorXd::Zero(m);
  s.include.assign(m, 1);
  s.pi = 0.5;
  s.gamma = VectorXd::Zero(q);
  s.upsilon = 1.0;
  return s;
}

namespace detail {

inline void check_design(const RegressionState& s, const VectorXi& y, const MatrixXd& z,
                         const MatrixXd& f) {
  const Index n = y.size();
  if (f.rows() != n || z.rows() != n)
    throw std::invalid_argument("probit: design rows do not match response length");
  if (f.cols() != s.m() || z.cols() != s.gamma.size())
    throw std::invalid_argument("probit: design columns do not match state");
  if (s.w.size() != n) throw std::invalid_argument("probit: latent length mismatch");
  for (Index i = 0; i < n; ++i)
    if (y[i] != 0 && y[i] != 1) throw std::invalid_argument("probit: response must be 0/1");
}

}  // namespace detail

/// Latent draw: w_i from N(z_i'gamma + f_i'b, 1) truncated to the half line that
/// matches y_i. Guarantees sign(w_i) consistent with y_i.
inline void update_w(RegressionState& s, const VectorXi& y, const MatrixXd& z,
                     const MatrixXd& f, RngStream& rng) {
  detail::check_design(s, y, z, f);
  const VectorXd mu = z * s.gamma + f * s.coef;
  for (Index i = 0; i < y.size(); ++i)
    s.w[i] = sample_truncated_normal(
        mu[i], 1.0, y[i] == 1 ? HalfLine::nonnegative : HalfLine::nonpositive, rng);
}

/// P(delta_k = 1 | b_k, pi) with full normal constants:
/// p1 = pi N(b_k | 0, slab), p0 = (1-pi) N(b_k | 0, spike).
inline double delta_prob(const RegressionState& s, const SelectHyper& h, Index k) {
  h.validate();
  if (k < 0 || k >= s.m()) throw std::invalid_argument("delta update: bad index");
  const double b2 = s.coef[k] * s.coef[k];
  const double lp1 = std::log(s.pi) - 0.5 * b2 / h.slab_var - 0.5 * std::log(h.slab_var);
  const double lp0 =
      std::log1p(-s.pi) - 0.5 * b2 / h.spike_var - 0.5 * std::log(h.spike_var);
  return 1.0 / (1.0 + std::exp(lp0 - lp1));
}

inline int update_delta(RegressionState& s, const SelectHyper& h, Index k, RngStream& rng) {
  const int d = rng.bernoulli(delta_prob(s, h, k)) ? 1 : 0;
  s.include[k] = static_cast<std::uint8_t>(d);
  return d;
}

/// Conditional of b_k given the residual wtilde that excludes feature
/// k's contribution; prior variance is the slab or spike per delta_k.
inline NormalParams b_conditional(const RegressionState& s, const SelectHyper& h,
                                  const VectorXd& wtilde, const MatrixXd& f, Index k) {
  h.validate();
  if (k < 0 || k >= s.m()) throw std::invalid_argument("b update: bad index");
  if (wtilde.size() != f.rows()) throw std::invalid_argument("b update: residual length");
  const double prior_var = s.include[k] ? h.slab_var : h.spike_var;
  const double v = 1.0 / (f.col(k).squaredNorm() + 1.0 / prior_var);
  return {v * f.col(k).dot(wtilde), v};
}

inline double update_b(RegressionState& s, const SelectHyper& h, const VectorXd& wtilde,
                       const MatrixXd& f, Index k, RngStream& rng) {
  const NormalParams p = b_conditional(s, h, wtilde, f, k);
  s.coef[k] = rng.normal(p.mean, std::sqrt(p.variance));
  return s.coef[k];
}

/// Beta counts for the inclusion probability, over the actual coefficient length.
inline std::pair<double, double> pi_conditional(const RegressionState& s,
                                                const SelectHyper& h) {
  h.validate();
  double included = 0;
  for (auto d : s.include) included += d;
  return {h.alpha0_pi + included, h.alpha1_pi + static_cast<double>(s.m()) - included};
}

inline double update_pi(RegressionState& s, const SelectHyper& h, RngStream& rng) {
  const auto [a, b] = pi_conditional(s, h);
  s.pi = rng.beta(a, b);
  return s.pi;
}

/// Clinical-coefficient conditional: mean and Cholesky of Sigma* = upsilon I + Z'Z; the
/// residual w* removes the imaging-feature contribution from w.
inline std::pair<VectorXd, Eigen::LLT<MatrixXd>> gamma_conditional(const RegressionState& s,
                                                                   const SelectHyper& h,
                                                                   const MatrixXd& z,
                                                                   const MatrixXd& f) {
  h.validate();
  const Index q = s.gamma.size();
  if (z.cols() != q) throw std::invalid_argument("gamma update: Z columns != q");
  VectorXd gstar = h.gamma_prior_mean.size() ? h.gamma_prior_mean : VectorXd::Zero(q);
  if (gstar.size() != q) throw std::invalid_argument("gamma update: prior mean size");
  const VectorXd wstar = s.w - f * s.coef;
  MatrixXd sigma = z.transpose() * z;
  sigma.diagonal().array() += s.upsilon;
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw NumericError("gamma update: Cholesky failed");
  const VectorXd mean = llt.solve(s.upsilon * gstar + z.transpose() * wstar);
  return {mean, llt};
}

inline VectorXd update_gamma(RegressionState& s, const SelectHyper& h, const MatrixXd& z,
                             const MatrixXd& f, RngStream& rng) {
  const Index q = s.gamma.size();
  if (q == 0) return s.gamma;  // no clinical covariates
  auto [mean, llt] = gamma_conditional(s, h, z, f);
  VectorXd noise(q);
  for (Index j = 0; j < q; ++j) noise[j] = rng.normal();
  s.gamma = mean + llt.matrixU().solve(noise);
  return s.gamma;
}

/// Prior-precision update: upsilon ~ Gamma(nu0 + q/2, nu1 + gamma'gamma / 2).
inline GammaParams upsilon_conditional(const RegressionState& s, const SelectHyper& h) {
  h.validate();
  return {h.nu0_upsilon + 0.5 * static_cast<double>(s.gamma.size()),
          h.nu1_upsilon + 0.5 * s.gamma.squaredNorm()};
}

inline double update_upsilon(RegressionState& s, const SelectHyper& h, RngStream& rng) {
  const GammaParams g = upsilon_conditional(s, h);
  s.upsilon = rng.gamma(g.shape, g.rate);
  return s.upsilon;
}

/// Data-informed start: one latent draw and one slab-conditional pass over b.
/// Without it the very first delta update sees the zero-initialized b and
/// drops every feature into the spike, where small-sample chains can take
/// thousands of sweeps to recover. Initialization only; the stationary
/// distribution is untouched.
inline void warm_start_coefficients(RegressionState& s, const VectorXi& y, const MatrixXd& z,
                                    const MatrixXd& f, const SelectHyper& h, RngStream& rng) {
  update_w(s, y, z, f, rng);
  VectorXd resid = s.w - z * s.gamma - f * s.coef;
  for (Index k = 0; k < s.m(); ++k) {
    const VectorXd wtilde = resid + f.col(k) * s.coef[k];
    const double old = s.coef[k];
    update_b(s, h, wtilde, f, k, rng);
    resid.noalias() -= f.col(k) * (s.coef[k] - old);
  }
}

/// One selection-block sweep: latent draw, inclusion indicators, coefficients,
/// inclusion probability, clinical coefficients, prior precision; b is updated
/// coordinatewise (k ascending) against an incrementally maintained residual.
inline void probit_sweep(RegressionState& s, const VectorXi& y, const MatrixXd& z,
                         const MatrixXd& f, const SelectHyper& h, RngStream& rng) {
  update_w(s, y, z, f, rng);
  for (Index k = 0; k < s.m(); ++k) update_delta(s, h, k, rng);
  VectorXd resid = s.w - z * s.gamma - f * s.coef;
  for (Index k = 0; k < s.m(); ++k) {
    const VectorXd wtilde = resid + f.col(k) * s.coef[k];
    const double old = s.coef[k];
    update_b(s, h, wtilde, f, k, rng);
    resid.noalias() -= f.col(k) * (s.coef[k] - old);
  }
  update_pi(s, h, rng);
  update_gamma(s, h, z, f, rng);
  update_upsilon(s, h, rng);
}

/// Posterior predictive P(y=1): average of Phi(z'gamma + f'b) over retained
/// draws (rows of the draw matrices).
inline VectorXd posterior_predictive(const MatrixXd& coef_draws, const MatrixXd& gamma_draws,
                                     const MatrixXd& fnew, const MatrixXd& znew) {
  const Index draws = coef_draws.rows();
  if (draws == 0) throw std::invalid_argument("predict: no draws");
  if (gamma_draws.rows() != draws)
    throw std::invalid_argument("predict: draw counts disagree");
  if (fnew.cols() != coef_draws.cols() || znew.cols() != gamma_draws.cols() ||
      fnew.rows() != znew.rows())
    throw std::invalid_argument("predict: design shapes do not match draws");
  VectorXd p = VectorXd::Zero(fnew.rows());
  for (Index t = 0; t < draws; ++t) {
    const VectorXd eta =
        fnew * coef_draws.row(t).transpose() + znew * gamma_draws.row(t).transpose();
    for (Index i = 0; i < p.size(); ++i) p[i] += normal_cdf(eta[i]);
  }
  return p / static_cast<double>(draws);
}

}  // namespace tprm
