#pragma once

#include <numeric>

#include "tprm/multilinear.hpp"
#include "tprm/rng.hpp"

namespace tprm {

struct CpAlsResult {
  CPFactors factors;   // unit-norm columns, magnitudes absorbed into weights
  double rel_error = 0.0;  // ||X - Xhat||_F / ||X||_F at the final sweep
  Index iterations = 0;
  bool converged = false;
};

namespace detail {

// Deterministic spectral init: leading eigenvectors of the mode Gram matrix,
// padded with seeded N(0, 1/J_d) entries when J_d < rank.
inline MatrixXd als_init_mode(const VectorXd& buf, const Dims& dims, Index d, Index rank) {
  const MatrixXd gram = mode_gram(buf, dims, d);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram);
  const Index jd = dims[d];
  const Index keep = std::min(jd, rank);
  MatrixXd a(jd, rank);
  for (Index r = 0; r < keep; ++r) a.col(r) = eig.eigenvectors().col(jd - 1 - r);
  if (keep < rank) {
    RngStream rng(0x746e6574u, static_cast<std::uint64_t>(d));
    const double sd = 1.0 / std::sqrt(static_cast<double>(jd));
    for (Index r = keep; r < rank; ++r)
      for (Index j = 0; j < jd; ++j) a(j, r) = rng.normal(0.0, sd);
  }
  return a;
}

}  // namespace detail

/// Classic CP-ALS: cycle modes, solve each factor's least squares via the
/// Khatri-Rao normal equations (pseudoinverse when rank deficient), normalize
/// columns into the weights, stop on relative fit change < tol.
inline CpAlsResult cp_als(const Tensor& x, Index rank, Index max_iters = 500,
                          double tol = 1e-8) {
  if (rank < 1) throw std::invalid_argument("cp_als: rank must be >= 1");
  if (x.order() < 2) throw std::invalid_argument("cp_als: tensor order must be >= 2");
  const Dims& dims = x.dims();
  for (Index d = 0; d < x.order(); ++d)
    if (rank > x.size() / dims[d])
      throw std::invalid_argument("cp_als: rank exceeds the mode-" + std::to_string(d + 1) +
                                  " least-squares capacity " +
                                  std::to_string(x.size() / dims[d]));
  if (max_iters < 1) throw std::invalid_argument("cp_als: max_iters must be >= 1");

  const Index D = x.order();
  const VectorXd& buf = x.data();
  const double norm_x2 = buf.squaredNorm();

  std::vector<MatrixXd> a(D);
  std::vector<MatrixXd> gram(D);
  for (Index d = 0; d < D; ++d) {
    a[d] = detail::als_init_mode(buf, dims, d, rank);
    gram[d] = a[d].transpose() * a[d];
  }
  VectorXd lambda = VectorXd::Ones(rank);

  CpAlsResult res;
  double fit_prev = -1.0;
  for (Index it = 1; it <= max_iters; ++it) {
    MatrixXd w_last;
    for (Index d = 0; d < D; ++d) {
      const MatrixXd w = mttkrp(buf, dims, a, d);
      MatrixXd v = MatrixXd::Ones(rank, rank);
      for (Index k = 0; k < D; ++k)
        if (k != d) v = v.cwiseProduct(gram[k]);
      // v is symmetric PSD; complete orthogonal decomposition covers the
      // rank-deficient case with the pseudoinverse solution.
      Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(v);
      a[d] = cod.solve(w.transpose()).transpose();
      for (Index r = 0; r < rank; ++r) {
        lambda[r] = a[d].col(r).norm();
        if (lambda[r] > 0) a[d].col(r) /= lambda[r];
      }
      gram[d] = a[d].transpose() * a[d];
      if (d == D - 1) w_last = w;
    }

    // Residual norm via the cached last-mode MTTKRP; no reconstruction pass.
    MatrixXd v_all = MatrixXd::Ones(rank, rank);
    for (Index k = 0; k < D; ++k) v_all = v_all.cwiseProduct(gram[k]);
    const double norm_m2 = lambda.dot(v_all * lambda);
    double ip = 0.0;
    for (Index r = 0; r < rank; ++r) ip += lambda[r] * a[D - 1].col(r).dot(w_last.col(r));
    double resid2 = std::max(norm_x2 - 2.0 * ip + norm_m2, 0.0);
    if (resid2 < 1e-13 * norm_x2) {
      // Below the cancellation floor of the Gram identity; measure directly.
      CPFactors cur;
      cur.weights = lambda;
      cur.factors = a;
      resid2 = (cp_reconstruct(cur).data() - buf).squaredNorm();
    }
    res.rel_error = norm_x2 > 0 ? std::sqrt(resid2 / norm_x2) : 0.0;
    res.iterations = it;
    const double fit = 1.0 - res.rel_error;
    if (it > 1 && std::fabs(fit - fit_prev) < tol) {
      res.converged = true;
      break;
    }
    fit_prev = fit;
  }

  // Order components by weight magnitude, descending.
  std::vector<Index> ord(rank);
  std::iota(ord.begin(), ord.end(), 0);
  std::stable_sort(ord.begin(), ord.end(),
                   [&](Index i, Index j) { return std::fabs(lambda[i]) > std::fabs(lambda[j]); });
  res.factors.weights.resize(rank);
  res.factors.factors.assign(D, MatrixXd());
  for (Index d = 0; d < D; ++d) res.factors.factors[d].resize(dims[d], rank);
  for (Index r = 0; r < rank; ++r) {
    res.factors.weights[r] = lambda[ord[r]];
    for (Index d = 0; d < D; ++d) res.factors.factors[d].col(r) = a[d].col(ord[r]);
  }
  return res;
}

}  // namespace tprm
