// SPDX-License-Identifier: Apache-2.0
// Small products would otherwise take Eigen's coefficient-based path, whose
// vectorized reductions peel according to the runtime alignment of the
// operands. Always using the packed kernel keeps results address-independent.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 1

#include "glaff/gemm.hpp"

#include <Eigen/Core>

namespace glaff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  using Idx = Eigen::Index;
  Eigen::Map<RowMat> C(c, static_cast<Idx>(m), static_cast<Idx>(n));
  if (k == 0) {
    if (!accumulate) C.setZero();
    return;
  }
  Eigen::Map<const RowMat> A(a, static_cast<Idx>(ta ? k : m), static_cast<Idx>(ta ? m : k));
  Eigen::Map<const RowMat> B(b, static_cast<Idx>(tb ? n : k), static_cast<Idx>(tb ? k : n));
  if (!ta && !tb) {
    if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
  } else if (!ta && tb) {
    if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
  } else if (ta && !tb) {
    if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
  } else {
    if (accumulate) C.noalias() += A.transpose() * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
}

}  // namespace glaff
