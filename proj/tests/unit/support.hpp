#pragma once

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "glaff/ops.hpp"
#include "glaff/random.hpp"
#include "glaff/tensor.hpp"

namespace test {

inline glaff::Tensor randn(glaff::Shape shape, glaff::Rng& rng, double sd = 1.0) {
  glaff::Tensor t = glaff::Tensor::empty(std::move(shape));
  for (double& v : t.mutable_data()) v = sd * rng.normal();
  return t;
}

inline glaff::Tensor param(glaff::Shape shape, glaff::Rng& rng, double sd = 1.0) {
  glaff::Tensor t = randn(std::move(shape), rng, sd);
  t.set_requires_grad();
  return t;
}

// Worst |analytic - central difference| / max(1, |central difference|)
// over every element of every tensor in `wrt`.
inline double gradcheck(const std::function<glaff::Tensor()>& loss, std::vector<glaff::Tensor> wrt,
                        double step = 1e-5) {
  for (auto& t : wrt) t.zero_grad();
  {
    glaff::Graph graph;
    glaff::Tensor root;
    {
      glaff::GraphScope scope(graph);
      root = loss();
    }
    graph.backward(root);
  }
  double worst = 0.0;
  for (auto& t : wrt) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss().item();
      values[i] = saved - step;
      const double down = loss().item();
      values[i] = saved;
      const double fd = (up - down) / (2 * step);
      worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

// Fixed random projection so that a tensor-valued function becomes a scalar
// loss with non-uniform output sensitivities.
inline glaff::Tensor project(const glaff::Tensor& out, std::uint64_t seed = 99) {
  glaff::Rng rng(seed);
  return glaff::sum(glaff::mul(out, randn(out.shape(), rng)));
}

}  // namespace test
