// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace glaff {

/// Toy sizes for finite-difference verification of the gradients.
struct GradcheckDims {
  std::size_t batch = 2;
  std::size_t hist_len = 8;
  std::size_t pred_len = 4;
  std::size_t channels = 2;
  std::size_t dim = 8;
  std::size_t ff_dim = 16;
  std::size_t heads = 2;
  std::size_t layers = 1;
  std::size_t kernel = 5;  // DLinear moving average
  double quantile = 0.75;
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct GradcheckEntry {
  std::string component;
  std::size_t checked = 0;     // scalar coordinates compared
  double max_rel_error = 0.0;  // max |autodiff - fd| / max(1, |fd|)
  std::string worst;           // coordinate with the largest error
  std::vector<std::string> offending;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double seconds = 0.0;

  bool passed() const;
  /// One line per component.
  std::string format() const;
};

/// Compares reverse-mode gradients with central differences for every
/// parameter (and differentiable input) of every layer, the composed model
/// loss, and checks that the quantile statistics ignore non-selected entries.
GradcheckReport run_gradcheck(const GradcheckDims& dims = {}, std::uint64_t seed = 1);

/// Throws GradcheckError naming the offending coordinates unless all passed.
void require_passed(const GradcheckReport& report);

}  // namespace glaff
