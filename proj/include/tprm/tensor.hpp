#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <utility>

#include "tprm/common.hpp"

namespace tprm {

/// Dense order-D real array with last-index-fastest linearization: the flat
/// offset of (j_1,...,j_D) is ((j_1*J_2 + j_2)*J_3 + ...)*J_D + j_D, so for a
/// matrix the buffer is row-major. Immutable after construction; the checked
/// constructor rejects non-finite entries.
template <typename Scalar = double>
class DenseTensor {
 public:
  using Buffer = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  DenseTensor() = default;

  DenseTensor(Dims dims, Buffer data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_positive_dims(dims_, "tensor");
    if (data_.size() != dims_product(dims_))
      throw std::invalid_argument("tensor: buffer length " + std::to_string(data_.size()) +
                                  " does not match dims " + dims_to_string(dims_));
    if (!data_.allFinite())
      throw std::invalid_argument("tensor: entries must be finite");
  }

  static DenseTensor zeros(Dims dims) {
    check_positive_dims(dims, "tensor");
    Buffer buf = Buffer::Zero(dims_product(dims));
    return from_raw_unchecked(std::move(dims), std::move(buf));
  }

  /// Trusted-buffer factory: skips the finiteness scan. For results that are
  /// finite by construction and for test instrumentation.
  static DenseTensor from_raw_unchecked(Dims dims, Buffer data) {
    check_positive_dims(dims, "tensor");
    if (data.size() != dims_product(dims))
      throw std::invalid_argument("tensor: buffer length does not match dims");
    DenseTensor t;
    t.dims_ = std::move(dims);
    t.data_ = std::move(data);
    return t;
  }

  const Dims& dims() const { return dims_; }
  Index order() const { return static_cast<Index>(dims_.size()); }
  Index size() const { return data_.size(); }
  const Buffer& data() const { return data_; }

  Index linear_index(const Dims& idx) const {
    Index off = 0;
    for (std::size_t k = 0; k < dims_.size(); ++k) off = off * dims_[k] + idx[k];
    return off;
  }

  Scalar at(const Dims& idx) const { return data_[linear_index(idx)]; }

  bool same_shape(const DenseTensor& other) const { return dims_ == other.dims_; }

 private:
  Dims dims_;
  Buffer data_;
};

using Tensor = DenseTensor<double>;

/// <x,y>: sum over all multi-indices of the entrywise product.
template <typename Scalar>
Scalar inner_product(const DenseTensor<Scalar>& x, const DenseTensor<Scalar>& y) {
  if (!x.same_shape(y))
    throw std::invalid_argument("inner_product: shape mismatch " + dims_to_string(x.dims()) +
                                " vs " + dims_to_string(y.dims()));
  return x.data().dot(y.data());
}

/// Frobenius norm of (xhat - x) divided by sqrt of the element count.
template <typename Scalar>
double rmse(const DenseTensor<Scalar>& x, const DenseTensor<Scalar>& xhat) {
  if (!x.same_shape(xhat))
    throw std::invalid_argument("rmse: shape mismatch");
  return std::sqrt((xhat.data() - x.data()).squaredNorm() / static_cast<double>(x.size()));
}

namespace detail {

// kron(a, cur) with cur's index fastest, matching the global layout.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> kron_prepend(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& a,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& cur) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(a.size() * cur.size());
  for (Index i = 0; i < a.size(); ++i) out.segment(i * cur.size(), cur.size()) = a[i] * cur;
  return out;
}

}  // namespace detail

/// Outer product of D >= 2 vectors: entry (j_1,...,j_D) = prod_k v_k[j_k].
template <typename Scalar>
DenseTensor<Scalar> outer_product(
    const std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& vectors) {
  if (vectors.size() < 2)
    throw std::invalid_argument("outer_product: need at least two vectors");
  Dims dims;
  for (const auto& v : vectors) {
    if (v.size() == 0) throw std::invalid_argument("outer_product: empty vector");
    dims.push_back(v.size());
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> buf = vectors.back();
  for (std::size_t k = vectors.size() - 1; k-- > 0;)
    buf = detail::kron_prepend(vectors[k], buf);
  return DenseTensor<Scalar>(std::move(dims), std::move(buf));
}

/// CP factor set: weights lambda_r, one J_d x R matrix per mode, and an
/// optional N x R subject-mode matrix appended as the last mode.
template <typename Scalar = double>
struct CPFactorsT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Vector weights;                  // lambda, size R
  std::vector<Matrix> factors;     // A^(d), each J_d x R
  std::optional<Matrix> subject;   // L, N x R

  Index rank() const { return weights.size(); }

  Dims result_dims() const {
    Dims d;
    for (const auto& a : factors) d.push_back(a.rows());
    if (subject) d.push_back(subject->rows());
    return d;
  }

  void validate() const {
    if (weights.size() == 0) throw std::invalid_argument("cp factors: rank must be >= 1");
    if (factors.empty()) throw std::invalid_argument("cp factors: no factor matrices");
    for (const auto& a : factors)
      if (a.cols() != rank())
        throw std::invalid_argument("cp factors: factor matrix has wrong column count");
    if (subject && subject->cols() != rank())
      throw std::invalid_argument("cp factors: subject matrix has wrong column count");
  }
};

using CPFactors = CPFactorsT<double>;

/// sum_r lambda_r a_r^(1) o ... o a_r^(D) [o l_r]; exact for consistent shapes.
template <typename Scalar>
DenseTensor<Scalar> cp_reconstruct(const CPFactorsT<Scalar>& f) {
  f.validate();
  using Matrix = typename CPFactorsT<Scalar>::Matrix;
  std::vector<const Matrix*> mats;
  for (const auto& a : f.factors) mats.push_back(&a);
  if (f.subject) mats.push_back(&*f.subject);

  Dims dims;
  for (const auto* m : mats) dims.push_back(m->rows());
  const Index total = dims_product(dims);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> buf(total);

  if (mats.size() == 1) {
    buf = *mats[0] * f.weights;
    return DenseTensor<Scalar>::from_raw_unchecked(std::move(dims), std::move(buf));
  }

  // Khatri-Rao chain over modes 2..M; later modes vary fastest, matching the
  // last-index-fastest layout, so the mode-1 unfolding is a plain GEMM.
  Matrix kr = *mats[1];
  for (std::size_t k = 2; k < mats.size(); ++k) {
    const Matrix& a = *mats[k];
    Matrix next(kr.rows() * a.rows(), f.rank());
    for (Index r = 0; r < f.rank(); ++r)
      for (Index i = 0; i < kr.rows(); ++i)
        next.block(i * a.rows(), r, a.rows(), 1) = kr(i, r) * a.col(r);
    kr = std::move(next);
  }
  using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<RowMajor> unfold(buf.data(), mats[0]->rows(), total / mats[0]->rows());
  unfold.noalias() = *mats[0] * f.weights.asDiagonal() * kr.transpose();
  return DenseTensor<Scalar>::from_raw_unchecked(std::move(dims), std::move(buf));
}

/// Disjoint congruent-block partition of a parent index set. Blocks are
/// ordered lexicographically in the block multi-index (last index fastest).
/// When pad_to_fit is set, non-divisible parent dims are zero-padded up to the
/// next block multiple; the grid keeps the original dims for reassembly.
class PartitionGrid {
 public:
  PartitionGrid(Dims parent_dims, Dims block_dims, bool pad_to_fit = false)
      : parent_dims_(std::move(parent_dims)), block_dims_(std::move(block_dims)) {
    check_positive_dims(parent_dims_, "partition grid");
    check_positive_dims(block_dims_, "partition grid");
    if (parent_dims_.size() != block_dims_.size())
      throw std::invalid_argument("partition grid: order mismatch");
    for (std::size_t k = 0; k < parent_dims_.size(); ++k) {
      if (block_dims_[k] > parent_dims_[k])
        throw std::invalid_argument("partition grid: block exceeds parent dims");
      if (parent_dims_[k] % block_dims_[k] != 0 && !pad_to_fit)
        throw std::invalid_argument("partition grid: block dims " + dims_to_string(block_dims_) +
                                    " do not divide parent " + dims_to_string(parent_dims_) +
                                    " (enable padding to round up)");
      const Index blocks = (parent_dims_[k] + block_dims_[k] - 1) / block_dims_[k];
      blocks_per_dim_.push_back(blocks);
      padded_dims_.push_back(blocks * block_dims_[k]);
    }
  }

  Index order() const { return static_cast<Index>(parent_dims_.size()); }
  Index block_count() const { return dims_product(blocks_per_dim_); }
  const Dims& parent_dims() const { return parent_dims_; }
  const Dims& block_dims() const { return block_dims_; }
  const Dims& padded_dims() const { return padded_dims_; }
  const Dims& blocks_per_dim() const { return blocks_per_dim_; }
  bool padded() const { return padded_dims_ != parent_dims_; }

  /// Element offset of block s in the (padded) parent.
  Dims block_offset(Index block_id) const {
    if (block_id < 0 || block_id >= block_count())
      throw std::invalid_argument("partition grid: block id out of range");
    Dims off(parent_dims_.size());
    for (std::size_t k = parent_dims_.size(); k-- > 0;) {
      off[k] = (block_id % blocks_per_dim_[k]) * block_dims_[k];
      block_id /= blocks_per_dim_[k];
    }
    return off;
  }

 private:
  Dims parent_dims_, block_dims_, blocks_per_dim_, padded_dims_;
};

namespace detail {

inline Index linear_offset(const Dims& dims, const Dims& idx) {
  Index off = 0;
  for (std::size_t k = 0; k < dims.size(); ++k) off = off * dims[k] + idx[k];
  return off;
}

// Odometer over a multi-index range, last index fastest.
inline void for_each_index(const Dims& dims, const std::function<void(const Dims&)>& f) {
  Dims idx(dims.size(), 0);
  for (;;) {
    f(idx);
    std::size_t k = dims.size();
    for (;;) {
      if (k == 0) return;
      --k;
      if (++idx[k] < dims[k]) break;
      idx[k] = 0;
    }
  }
}

}  // namespace detail

/// Splits x into grid.block_count() sub-tensors; exact inverse of unpartition.
/// Padded regions (if any) read as zero.
template <typename Scalar>
std::vector<DenseTensor<Scalar>> partition(const DenseTensor<Scalar>& x,
                                           const PartitionGrid& grid) {
  if (x.dims() != grid.parent_dims())
    throw std::invalid_argument("partition: tensor dims " + dims_to_string(x.dims()) +
                                " do not match grid parent " +
                                dims_to_string(grid.parent_dims()));
  const Dims& bd = grid.block_dims();
  const Dims& pd = grid.parent_dims();
  const std::size_t D = bd.size();
  const Index row_len = bd[D - 1];

  std::vector<DenseTensor<Scalar>> blocks;
  blocks.reserve(grid.block_count());
  Dims prefix_dims(bd.begin(), bd.end() - 1);

  for (Index s = 0; s < grid.block_count(); ++s) {
    const Dims off = grid.block_offset(s);
    typename DenseTensor<Scalar>::Buffer buf =
        DenseTensor<Scalar>::Buffer::Zero(dims_product(bd));
    Index out_row = 0;
    detail::for_each_index(prefix_dims, [&](const Dims& within) {
      bool in_range = true;
      Dims src(D);
      for (std::size_t k = 0; k + 1 < D; ++k) {
        src[k] = off[k] + within[k];
        if (src[k] >= pd[k]) in_range = false;
      }
      src[D - 1] = off[D - 1];
      if (in_range && src[D - 1] < pd[D - 1]) {
        const Index copy_len = std::min(row_len, pd[D - 1] - src[D - 1]);
        buf.segment(out_row * row_len, copy_len) =
            x.data().segment(x.linear_index(src), copy_len);
      }
      ++out_row;
    });
    blocks.push_back(DenseTensor<Scalar>::from_raw_unchecked(bd, std::move(buf)));
  }
  return blocks;
}

/// Reassembles blocks produced by partition; crops any padding back to the
/// original parent dims. Bit-exact round trip with partition.
template <typename Scalar>
DenseTensor<Scalar> unpartition(const std::vector<DenseTensor<Scalar>>& blocks,
                                const PartitionGrid& grid) {
  if (static_cast<Index>(blocks.size()) != grid.block_count())
    throw std::invalid_argument("unpartition: expected " + std::to_string(grid.block_count()) +
                                " blocks, got " + std::to_string(blocks.size()));
  const Dims& bd = grid.block_dims();
  const Dims& pd = grid.parent_dims();
  const std::size_t D = bd.size();
  const Index row_len = bd[D - 1];

  typename DenseTensor<Scalar>::Buffer buf =
      DenseTensor<Scalar>::Buffer::Zero(dims_product(pd));
  Dims prefix_dims(bd.begin(), bd.end() - 1);

  for (Index s = 0; s < grid.block_count(); ++s) {
    if (blocks[s].dims() != bd)
      throw std::invalid_argument("unpartition: block " + std::to_string(s) +
                                  " has dims " + dims_to_string(blocks[s].dims()) +
                                  ", expected " + dims_to_string(bd));
    const Dims off = grid.block_offset(s);
    Index in_row = 0;
    detail::for_each_index(prefix_dims, [&](const Dims& within) {
      bool in_range = true;
      Dims dst(D);
      for (std::size_t k = 0; k + 1 < D; ++k) {
        dst[k] = off[k] + within[k];
        if (dst[k] >= pd[k]) in_range = false;
      }
      dst[D - 1] = off[D - 1];
      if (in_range && dst[D - 1] < pd[D - 1]) {
        const Index copy_len = std::min(row_len, pd[D - 1] - dst[D - 1]);
        buf.segment(detail::linear_offset(pd, dst), copy_len) =
            blocks[s].data().segment(in_row * row_len, copy_len);
      }
      ++in_row;
    });
  }
  return DenseTensor<Scalar>::from_raw_unchecked(pd, std::move(buf));
}

}  // namespace tprm
