#pragma once

#include "tprm/multilinear.hpp"
#include "tprm/rng.hpp"

namespace tprm {

struct CPHyper {
  double nu0_tau = 1.0;   // Gamma shape for the noise precision
  double nu1_tau = 1e-4;  // Gamma rate
  double kappa = 1e-4;    // prior precision of the weights
  Index rank = 5;

  void validate() const {
    if (rank < 1) throw std::invalid_argument("cp hyper: rank must be >= 1");
    if (!(nu0_tau > 0 && nu1_tau > 0 && kappa > 0))
      throw std::invalid_argument("cp hyper: nu0, nu1, kappa must be positive");
  }
};

/// Per-partition decomposition state: weights/factors (and the subject-mode
/// matrix when the block carries a subject dimension) plus noise precision.
struct CPState {
  CPFactors factors;
  double tau = 1.0;
  Index partition_id = 0;

  Index spatial_order() const { return static_cast<Index>(factors.factors.size()); }
};

namespace detail {

inline void check_state_block(const CPState& s, const Tensor& block) {
  s.factors.validate();
  const Dims want = s.factors.result_dims();
  if (want != block.dims())
    throw std::invalid_argument("cp state: factor shapes " + dims_to_string(want) +
                                " do not match block " + dims_to_string(block.dims()));
}

// Flattened rank-r design tensor: the outer product of column r of every mode
// (subject last), skipping skip_mode if >= 0, scaled by `scale`.
inline VectorXd rank_design(const CPFactors& f, Index r, Index skip_mode, double scale) {
  std::vector<VectorXd> holders;
  const Index spatial = static_cast<Index>(f.factors.size());
  for (Index d = 0; d < spatial; ++d)
    if (d != skip_mode) holders.emplace_back(f.factors[d].col(r));
  if (f.subject && skip_mode != spatial) holders.emplace_back(f.subject->col(r));
  if (holders.empty()) return VectorXd::Constant(1, scale);
  VectorXd out = holders.back();
  for (std::size_t k = holders.size() - 1; k-- > 0;) out = kron_prepend(holders[k], out);
  return scale * out;
}

inline VectorXd residual_of(const CPState& s, const Tensor& block) {
  VectorXd resid = block.data() - cp_reconstruct(s.factors).data();
  if (!resid.allFinite()) throw NumericError("cp gibbs: non-finite residual");
  return resid;
}

}  // namespace detail

/// Full conditional of tau: Gamma(nu0 + n/2, nu1 + ||block - recon||^2 / 2).
inline GammaParams tau_conditional(const CPState& s, const Tensor& block, const CPHyper& h) {
  detail::check_state_block(s, block);
  const VectorXd resid = detail::residual_of(s, block);
  return {h.nu0_tau + 0.5 * static_cast<double>(block.size()),
          h.nu1_tau + 0.5 * resid.squaredNorm()};
}

inline double update_tau(CPState& s, const Tensor& block, const CPHyper& h, RngStream& rng) {
  const GammaParams g = tau_conditional(s, block, h);
  s.tau = rng.gamma(g.shape, g.rate);
  return s.tau;
}

/// Full conditional of entry (jd, r) of the mode-d factor matrix: normal with
/// precision tau <I,I> + p_d, where I is the rank-r design omitting mode d and
/// the prior column distribution is N(0, p_d^{-1} I).
inline NormalParams factor_entry_conditional(const CPState& s, const Tensor& block,
                                             const CPHyper& h, Index d, Index jd, Index r) {
  detail::check_state_block(s, block);
  const Index spatial = s.spatial_order();
  if (d < 0 || d >= spatial) throw std::invalid_argument("factor update: bad mode");
  if (r < 0 || r >= s.factors.rank()) throw std::invalid_argument("factor update: bad rank");
  if (jd < 0 || jd >= block.dims()[d]) throw std::invalid_argument("factor update: bad index");
  (void)h;
  const double pd = static_cast<double>(block.dims()[d]);
  const VectorXd resid = detail::residual_of(s, block);
  const VectorXd u = detail::rank_design(s.factors, r, d, s.factors.weights[r]);
  const double uu = u.squaredNorm();
  const VectorXd c = mode_contract(resid, block.dims(), d, u);
  const double chat = c[jd] + s.factors.factors[d](jd, r) * uu;
  const double prec = s.tau * uu + pd;
  return {s.tau * chat / prec, 1.0 / prec};
}

inline double update_factor_entry(CPState& s, const Tensor& block, const CPHyper& h, Index d,
                                  Index jd, Index r, RngStream& rng) {
  const NormalParams p = factor_entry_conditional(s, block, h, d, jd, r);
  const double draw = rng.normal(p.mean, std::sqrt(p.variance));
  s.factors.factors[d](jd, r) = draw;
  return draw;
}

/// Full conditional of subject score (i, r); the update adds N to the data
/// precision, i.e. an effective N(0, N^{-1} I) prior on each column.
inline NormalParams subject_entry_conditional(const CPState& s, const Tensor& block,
                                              const CPHyper& h, Index i, Index r) {
  detail::check_state_block(s, block);
  if (!s.factors.subject) throw std::invalid_argument("subject update: no subject mode");
  if (r < 0 || r >= s.factors.rank()) throw std::invalid_argument("subject update: bad rank");
  const Index subj_mode = s.spatial_order();
  const Index n = block.dims()[subj_mode];
  if (i < 0 || i >= n) throw std::invalid_argument("subject update: bad index");
  (void)h;
  const VectorXd resid = detail::residual_of(s, block);
  const VectorXd u = detail::rank_design(s.factors, r, subj_mode, s.factors.weights[r]);
  const double uu = u.squaredNorm();
  const VectorXd c = mode_contract(resid, block.dims(), subj_mode, u);
  const double chat = c[i] + (*s.factors.subject)(i, r) * uu;
  const double prec = s.tau * uu + static_cast<double>(n);
  return {s.tau * chat / prec, 1.0 / prec};
}

inline double update_subject_entry(CPState& s, const Tensor& block, const CPHyper& h, Index i,
                                   Index r, RngStream& rng) {
  const NormalParams p = subject_entry_conditional(s, block, h, i, r);
  const double draw = rng.normal(p.mean, std::sqrt(p.variance));
  (*s.factors.subject)(i, r) = draw;
  return draw;
}

/// Full conditional of lambda_r against the unit-weight rank-r design.
inline NormalParams lambda_conditional(const CPState& s, const Tensor& block, const CPHyper& h,
                                       Index r) {
  detail::check_state_block(s, block);
  if (r < 0 || r >= s.factors.rank()) throw std::invalid_argument("lambda update: bad rank");
  const VectorXd resid = detail::residual_of(s, block);
  const VectorXd u = detail::rank_design(s.factors, r, -1, 1.0);
  const double uu = u.squaredNorm();
  const double chat = resid.dot(u) + s.factors.weights[r] * uu;
  const double prec = s.tau * uu + h.kappa;
  return {s.tau * chat / prec, 1.0 / prec};
}

inline double update_lambda(CPState& s, const Tensor& block, const CPHyper& h, Index r,
                            RngStream& rng) {
  const NormalParams p = lambda_conditional(s, block, h, r);
  const double draw = rng.normal(p.mean, std::sqrt(p.variance));
  s.factors.weights[r] = draw;
  return draw;
}

/// Prior-scale initialization: factor entries N(0, 1/p_d), subject scores
/// N(0, 1/N), unit weights, tau at its prior mean.
inline CPState init_cp_state(const Dims& spatial_dims, std::optional<Index> subjects,
                             const CPHyper& h, RngStream& rng) {
  h.validate();
  CPState s;
  s.factors.weights = VectorXd::Ones(h.rank);
  for (Index d = 0; d < static_cast<Index>(spatial_dims.size()); ++d) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(spatial_dims[d]));
    MatrixXd a(spatial_dims[d], h.rank);
    for (Index r = 0; r < h.rank; ++r)
      for (Index j = 0; j < spatial_dims[d]; ++j) a(j, r) = rng.normal(0.0, sd);
    s.factors.factors.push_back(std::move(a));
  }
  if (subjects) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(*subjects));
    MatrixXd l(*subjects, h.rank);
    for (Index r = 0; r < h.rank; ++r)
      for (Index i = 0; i < *subjects; ++i) l(i, r) = rng.normal(0.0, sd);
    s.factors.subject = std::move(l);
  }
  s.tau = h.nu0_tau / h.nu1_tau;
  return s;
}

/// One-block Gibbs machine for the decomposition block (noise precision,
/// factor matrices, subject scores, weights). Applies the same
/// conditionals as the entrywise update functions, but sweeps whole columns
/// against an incrementally maintained residual; the residual is rebuilt from
/// scratch at each sweep so within-sweep drift cannot accumulate.
class CpBlockSampler {
 public:
  CpBlockSampler(const Tensor& block, const CPHyper& h, bool subject_mode)
      : block_(&block), h_(h), subject_mode_(subject_mode) {
    h_.validate();
    if (block.order() < 2)
      throw std::invalid_argument("cp gibbs: block order must be >= 2");
  }

  /// Sweep order: tau; modes d ascending with columns r ascending and entries
  /// ascending within a column; subject scores; weights.
  void sweep(CPState& s, RngStream& rng) {
    detail::check_state_block(s, *block_);
    const Dims& dims = block_->dims();
    const Index spatial = s.spatial_order();
    if (subject_mode_ && !s.factors.subject)
      throw std::invalid_argument("cp gibbs: state lacks subject mode");

    resid_ = block_->data() - cp_reconstruct(s.factors).data();
    if (!resid_.allFinite()) throw NumericError("cp gibbs: non-finite residual");

    // noise precision
    s.tau = rng.gamma(h_.nu0_tau + 0.5 * static_cast<double>(block_->size()),
                      h_.nu1_tau + 0.5 * resid_.squaredNorm());

    // spatial factor matrices
    for (Index d = 0; d < spatial; ++d) {
      const double prior_prec = static_cast<double>(dims[d]);
      for (Index r = 0; r < s.factors.rank(); ++r)
        sweep_mode_column(s, rng, d, r, s.factors.factors[d], prior_prec,
                          s.factors.weights[r]);
    }

    // subject scores
    if (subject_mode_) {
      const Index subj_mode = spatial;
      const double prior_prec = static_cast<double>(dims[subj_mode]);
      for (Index r = 0; r < s.factors.rank(); ++r)
        sweep_mode_column(s, rng, subj_mode, r, *s.factors.subject, prior_prec,
                          s.factors.weights[r]);
    }

    // weights
    for (Index r = 0; r < s.factors.rank(); ++r) {
      const VectorXd u = detail::rank_design(s.factors, r, -1, 1.0);
      const double uu = u.squaredNorm();
      const double chat = resid_.dot(u) + s.factors.weights[r] * uu;
      const double prec = s.tau * uu + h_.kappa;
      const double draw = rng.normal(s.tau * chat / prec, 1.0 / std::sqrt(prec));
      const double delta = draw - s.factors.weights[r];
      resid_.noalias() -= delta * u;
      s.factors.weights[r] = draw;
    }
  }

  const VectorXd& residual() const { return resid_; }

 private:
  void sweep_mode_column(CPState& s, RngStream& rng, Index mode, Index r, MatrixXd& mat,
                         double prior_prec, double scale) {
    const Dims& dims = block_->dims();
    const VectorXd u = detail::rank_design(s.factors, r, mode, scale);
    const double uu = u.squaredNorm();
    const VectorXd c = mode_contract(resid_, dims, mode, u);
    const double prec = s.tau * uu + prior_prec;
    const double sd = 1.0 / std::sqrt(prec);
    VectorXd delta(dims[mode]);
    for (Index j = 0; j < dims[mode]; ++j) {
      const double old = mat(j, r);
      const double mean = s.tau * (c[j] + old * uu) / prec;
      const double draw = mean + sd * rng.normal();
      delta[j] = old - draw;
      mat(j, r) = draw;
    }
    mode_rank1_update(resid_, dims, mode, delta, u);
  }

  const Tensor* block_;
  CPHyper h_;
  bool subject_mode_;
  VectorXd resid_;
};

/// Runs iters full decomposition sweeps from a prior-scale start and records the
/// state after each sweep. Deterministic given the stream.
inline std::vector<CPState> gibbs_cp(const Tensor& block, const CPHyper& h, Index iters,
                                     RngStream& rng, bool subject_mode = false) {
  h.validate();
  if (iters < 1) throw std::invalid_argument("gibbs_cp: iters must be >= 1");
  if (block.order() < 2) throw std::invalid_argument("gibbs_cp: block order must be >= 2");
  Dims spatial(block.dims().begin(), block.dims().end() - (subject_mode ? 1 : 0));
  if (spatial.empty()) throw std::invalid_argument("gibbs_cp: no spatial modes");
  std::optional<Index> subjects;
  if (subject_mode) subjects = block.dims().back();

  CPState s = init_cp_state(spatial, subjects, h, rng);
  CpBlockSampler sampler(block, h, subject_mode);
  std::vector<CPState> chain;
  chain.reserve(iters);
  for (Index it = 0; it < iters; ++it) {
    sampler.sweep(s, rng);
    chain.push_back(s);
  }
  return chain;
}

}  // namespace tprm
