// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

// Element-wise kernels whose result for an element does not depend on its
// position or on the alignment of the buffer.
namespace glaff::vec {

/// y[i] = exp(x[i]); y may alias x.
void exp(const double* x, double* y, std::size_t n);
/// y[i] = erf(x[i]) to within a few units in the last place; y may alias x.
void erf(const double* x, double* y, std::size_t n);

/// Uniform in [0, 1) from a counter: the stream element `index` of `key`.
inline double hashed_uniform(std::uint64_t key, std::uint64_t index) {
  std::uint64_t z = key + index * 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

}  // namespace glaff::vec
