#pragma once

#include "tprm/cp_gibbs.hpp"

namespace tprm {

struct FactorHyper {
  double beta0_tau_psi = 1e-6;  // Gamma shape for the idiosyncratic precision
  double beta1_tau_psi = 1e-6;  // Gamma rate

  void validate() const {
    if (!(beta0_tau_psi > 0 && beta1_tau_psi > 0))
      throw std::invalid_argument("factor hyper: beta parameters must be positive");
  }
};

/// Latent factor state for L ~ G D + noise: G holds one score column per
/// factor (n x K), D the latent basis (K x P_L).
struct FactorState {
  MatrixXd scores;  // G
  MatrixXd basis;   // D
  double tau_psi = 1.0;

  Index n() const { return scores.rows(); }
  Index k() const { return scores.cols(); }
  Index p() const { return basis.cols(); }

  void validate() const {
    if (scores.cols() != basis.rows())
      throw std::invalid_argument("factor state: G and D disagree on K");
    if (!(tau_psi > 0)) throw std::invalid_argument("factor state: tau_psi must be positive");
  }
};

/// Horizontal concatenation of the per-partition subject-score matrices, in
/// partition order.
inline MatrixXd assemble_L(const std::vector<CPState>& states) {
  if (states.empty()) throw std::invalid_argument("assemble_L: no partitions");
  Index n = -1, cols = 0;
  for (const auto& s : states) {
    if (!s.factors.subject) throw std::invalid_argument("assemble_L: state lacks subject mode");
    if (n < 0) n = s.factors.subject->rows();
    if (s.factors.subject->rows() != n)
      throw std::invalid_argument("assemble_L: subject counts differ across partitions");
    cols += s.factors.subject->cols();
  }
  MatrixXd out(n, cols);
  Index at = 0;
  for (const auto& s : states) {
    out.middleCols(at, s.factors.subject->cols()) = *s.factors.subject;
    at += s.factors.subject->cols();
  }
  return out;
}

/// Column standardization (sample sd, ddof 1); degenerate columns keep scale 1.
struct Standardizer {
  VectorXd mean, scale;

  static Standardizer fit(const MatrixXd& m) {
    Standardizer s;
    s.mean = m.colwise().mean();
    s.scale.resize(m.cols());
    for (Index j = 0; j < m.cols(); ++j) {
      const double ss = (m.col(j).array() - s.mean[j]).square().sum();
      const double sd = m.rows() > 1 ? std::sqrt(ss / (m.rows() - 1)) : 0.0;
      s.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  /// Center to zero mean but scale by the column root mean square. For
  /// columns that actually vary this matches unit-variance scaling up to the
  /// mean offset; for near-constant columns (shared structure absorbed by a
  /// component) the scale stays at the column's magnitude instead of its
  /// vanishing sd, which keeps the inverse map used by image-space
  /// projections from amplifying coefficient noise without bound.
  static Standardizer fit_rms(const MatrixXd& m) {
    Standardizer s;
    s.mean = m.colwise().mean();
    s.scale.resize(m.cols());
    for (Index j = 0; j < m.cols(); ++j) {
      const double rms = std::sqrt(m.col(j).squaredNorm() / m.rows());
      s.scale[j] = rms > 1e-12 ? rms : 1.0;
    }
    return s;
  }

  MatrixXd apply(const MatrixXd& m) const {
    return (m.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
};

namespace detail {

inline void check_factor_shapes(const FactorState& s, const MatrixXd& l) {
  s.validate();
  if (s.scores.rows() != l.rows() || s.basis.cols() != l.cols())
    throw std::invalid_argument("factor update: state shapes do not match L");
}

}  // namespace detail

/// Conditional of score column g_k: N(mu, sig2 I_n) with
/// sig2 = (n + tau_psi sum_j d_kj^2)^{-1} and mu driven by the residual with
/// component k added back.
inline std::pair<VectorXd, double> g_conditional(const FactorState& s, const MatrixXd& l,
                                                 Index k) {
  detail::check_factor_shapes(s, l);
  if (k < 0 || k >= s.k()) throw std::invalid_argument("g update: bad factor index");
  const MatrixXd resid = l - s.scores * s.basis;
  const VectorXd dk = s.basis.row(k).transpose();
  const double d2 = dk.squaredNorm();
  const double sig2 = 1.0 / (static_cast<double>(s.n()) + s.tau_psi * d2);
  const VectorXd sum = resid * dk + d2 * s.scores.col(k);
  return {s.tau_psi * sig2 * sum, sig2};
}

inline VectorXd update_g(FactorState& s, const MatrixXd& l, Index k, RngStream& rng) {
  auto [mean, sig2] = g_conditional(s, l, k);
  const double sd = std::sqrt(sig2);
  for (Index i = 0; i < mean.size(); ++i) mean[i] += sd * rng.normal();
  s.scores.col(k) = mean;
  return mean;
}

/// Conditional of basis row d_k: independent N(tau_psi Sig_d g_k' l*_j,
/// Sig_d) per column j, Sig_d = (1 + tau_psi g_k'g_k)^{-1}.
inline std::pair<VectorXd, double> d_conditional(const FactorState& s, const MatrixXd& l,
                                                 Index k) {
  detail::check_factor_shapes(s, l);
  if (k < 0 || k >= s.k()) throw std::invalid_argument("d update: bad factor index");
  const MatrixXd resid = l - s.scores * s.basis;
  const VectorXd gk = s.scores.col(k);
  const double g2 = gk.squaredNorm();
  const double sig2 = 1.0 / (1.0 + s.tau_psi * g2);
  const VectorXd sum = resid.transpose() * gk + g2 * s.basis.row(k).transpose();
  return {s.tau_psi * sig2 * sum, sig2};
}

inline VectorXd update_d(FactorState& s, const MatrixXd& l, Index k, RngStream& rng) {
  auto [mean, sig2] = d_conditional(s, l, k);
  const double sd = std::sqrt(sig2);
  for (Index j = 0; j < mean.size(); ++j) mean[j] += sd * rng.normal();
  s.basis.row(k) = mean.transpose();
  return mean;
}

/// Conditional of the idiosyncratic precision:
/// Gamma(beta0 + n P_L / 2, beta1 + ||L - G D||_F^2 / 2).
inline GammaParams tau_psi_conditional(const FactorState& s, const MatrixXd& l,
                                       const FactorHyper& h) {
  detail::check_factor_shapes(s, l);
  h.validate();
  const double ss = (l - s.scores * s.basis).squaredNorm();
  return {h.beta0_tau_psi + 0.5 * static_cast<double>(l.size()),
          h.beta1_tau_psi + 0.5 * ss};
}

inline double update_tau_psi(FactorState& s, const MatrixXd& l, const FactorHyper& h,
                             RngStream& rng) {
  const GammaParams g = tau_psi_conditional(s, l, h);
  s.tau_psi = rng.gamma(g.shape, g.rate);
  return s.tau_psi;
}

inline FactorState init_factor_state(Index n, Index k, Index p, RngStream& rng) {
  if (n < 1 || k < 1 || p < 1)
    throw std::invalid_argument("factor init: dimensions must be positive");
  FactorState s;
  const double g_sd = 1.0 / std::sqrt(static_cast<double>(n));
  s.scores = MatrixXd::NullaryExpr(n, k, [&](Index, Index) { return rng.normal(0, g_sd); });
  s.basis = MatrixXd::NullaryExpr(k, p, [&](Index, Index) { return rng.normal(); });
  s.tau_psi = 1.0;
  return s;
}

/// One factor-block sweep: all score columns, then all basis rows (each with an
/// incrementally maintained residual), then the precision from a fresh
/// residual.
inline void factor_sweep(FactorState& s, const MatrixXd& l, const FactorHyper& h,
                         RngStream& rng) {
  detail::check_factor_shapes(s, l);
  const Index n = s.n(), k_count = s.k();
  MatrixXd resid = l - s.scores * s.basis;

  for (Index k = 0; k < k_count; ++k) {
    const VectorXd dk = s.basis.row(k).transpose();
    const double d2 = dk.squaredNorm();
    const double sig2 = 1.0 / (static_cast<double>(n) + s.tau_psi * d2);
    const double sd = std::sqrt(sig2);
    VectorXd mean = s.tau_psi * sig2 * (resid * dk + d2 * s.scores.col(k));
    for (Index i = 0; i < n; ++i) mean[i] += sd * rng.normal();
    resid.noalias() -= (mean - s.scores.col(k)) * dk.transpose();
    s.scores.col(k) = mean;
  }
  for (Index k = 0; k < k_count; ++k) {
    const VectorXd gk = s.scores.col(k);
    const double g2 = gk.squaredNorm();
    const double sig2 = 1.0 / (1.0 + s.tau_psi * g2);
    const double sd = std::sqrt(sig2);
    VectorXd mean = s.tau_psi * sig2 * (resid.transpose() * gk + g2 * s.basis.row(k).transpose());
    for (Index j = 0; j < mean.size(); ++j) mean[j] += sd * rng.normal();
    resid.noalias() -= gk * (mean.transpose() - s.basis.row(k));
    s.basis.row(k) = mean.transpose();
  }
  update_tau_psi(s, l, h, rng);
}

}  // namespace tprm
