// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace glaff {

/// C[m x n] (+)= op(A) op(B) on contiguous row-major buffers. op(A) is
/// [m x k]; A is stored [k x m] when `ta` is set, likewise B for `tb`.
/// Results depend only on the operand values, never on their addresses.
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c, bool accumulate);

}  // namespace glaff
