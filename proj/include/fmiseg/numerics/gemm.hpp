#pragma once

#include <Eigen/Core>

namespace fmiseg::kernels {

/// C[M,N] (+)= op(A) * op(B) over contiguous row-major buffers.
/// op(A) is M x K: A is stored M x K, or K x M when trans_a.
/// op(B) is K x N: B is stored K x N, or N x K when trans_b.
inline void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const float* a, const float* b,
                 float* c, bool accumulate) {
  using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMat>;
  Eigen::Map<RowMat> cm(c, m, n);
  if (!accumulate) cm.setZero();
  if (k == 0) return;
  const ConstMap am(a, trans_a ? k : m, trans_a ? m : k);
  const ConstMap bm(b, trans_b ? n : k, trans_b ? k : n);
  if (!trans_a && !trans_b) {
    cm.noalias() += am * bm;
  } else if (trans_a && !trans_b) {
    cm.noalias() += am.transpose() * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am.transpose() * bm.transpose();
  }
}

}  // namespace fmiseg::kernels
