#pragma once

#include "tprm/tensor.hpp"

namespace tprm {
namespace detail {

// Mode geometry for the flat last-index-fastest layout: entries of mode d
// live at offset (o*J_d + j)*inner + in, with o ranging over the linearized
// index of modes before d and in over modes after d.
struct ModeSpan {
  Index outer, dim, inner;
};

inline ModeSpan mode_span(const Dims& dims, Index d) {
  ModeSpan sp{1, dims[d], 1};
  for (Index k = 0; k < d; ++k) sp.outer *= dims[k];
  for (Index k = d + 1; k < static_cast<Index>(dims.size()); ++k) sp.inner *= dims[k];
  return sp;
}

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

/// Columnwise Khatri-Rao product; b's rows vary fastest, matching the layout.
inline MatrixXd khatri_rao(const MatrixXd& a, const MatrixXd& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("khatri_rao: column mismatch");
  MatrixXd out(a.rows() * b.rows(), a.cols());
  for (Index r = 0; r < a.cols(); ++r)
    for (Index i = 0; i < a.rows(); ++i)
      out.block(i * b.rows(), r, b.rows(), 1) = a(i, r) * b.col(r);
  return out;
}

/// Khatri-Rao chain over all matrices except index skip (all, when skip < 0);
/// row order matches the layout co-index of the skipped mode.
inline MatrixXd khatri_rao_skip(const std::vector<MatrixXd>& mats, Index skip) {
  MatrixXd out;
  for (Index k = 0; k < static_cast<Index>(mats.size()); ++k) {
    if (k == skip) continue;
    out = out.size() ? khatri_rao(out, mats[k]) : mats[k];
  }
  if (!out.size()) throw std::invalid_argument("khatri_rao_skip: no matrices left");
  return out;
}

/// Matricized tensor times Khatri-Rao product for mode d, computed directly
/// from the flat buffer (the unfolding is never materialized).
inline MatrixXd mttkrp(const VectorXd& buf, const Dims& dims,
                       const std::vector<MatrixXd>& mats, Index d) {
  const auto sp = detail::mode_span(dims, d);
  const MatrixXd kr = khatri_rao_skip(mats, d);
  MatrixXd out = MatrixXd::Zero(sp.dim, mats[d].cols());
  for (Index o = 0; o < sp.outer; ++o) {
    Eigen::Map<const detail::RowMajorMatrix> slab(buf.data() + o * sp.dim * sp.inner, sp.dim,
                                                  sp.inner);
    out.noalias() += slab * kr.middleRows(o * sp.inner, sp.inner);
  }
  return out;
}

/// Gram matrix of the mode-d unfolding, X_(d) X_(d)^T, from the flat buffer.
inline MatrixXd mode_gram(const VectorXd& buf, const Dims& dims, Index d) {
  const auto sp = detail::mode_span(dims, d);
  MatrixXd out = MatrixXd::Zero(sp.dim, sp.dim);
  for (Index o = 0; o < sp.outer; ++o) {
    Eigen::Map<const detail::RowMajorMatrix> slab(buf.data() + o * sp.dim * sp.inner, sp.dim,
                                                  sp.inner);
    out.noalias() += slab * slab.transpose();
  }
  return out;
}

/// Contraction of the buffer against a co-index vector u for mode d:
/// out[j] = sum_{o,in} buf[(o*J_d + j)*inner + in] * u[o*inner + in].
inline VectorXd mode_contract(const VectorXd& buf, const Dims& dims, Index d,
                              const VectorXd& u) {
  const auto sp = detail::mode_span(dims, d);
  VectorXd out = VectorXd::Zero(sp.dim);
  for (Index o = 0; o < sp.outer; ++o) {
    Eigen::Map<const detail::RowMajorMatrix> slab(buf.data() + o * sp.dim * sp.inner, sp.dim,
                                                  sp.inner);
    out.noalias() += slab * u.segment(o * sp.inner, sp.inner);
  }
  return out;
}

/// In-place rank-one update buf += coef (x)_d u, the mode-d outer product of
/// a mode vector with a co-index vector.
inline void mode_rank1_update(VectorXd& buf, const Dims& dims, Index d, const VectorXd& coef,
                              const VectorXd& u) {
  const auto sp = detail::mode_span(dims, d);
  for (Index o = 0; o < sp.outer; ++o) {
    Eigen::Map<detail::RowMajorMatrix> slab(buf.data() + o * sp.dim * sp.inner, sp.dim,
                                            sp.inner);
    slab.noalias() += coef * u.segment(o * sp.inner, sp.inner).transpose();
  }
}

}  // namespace tprm
