// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "glaff/tensor.hpp"

namespace glaff {

// Elementwise arithmetic with right-aligned (numpy-style) broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }

/// Sum of all elements; result has shape [].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean of squared differences over all elements.
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

// Reductions along one axis; the reduced axis is kept with size 1.
Tensor mean_axis(const Tensor& x, int axis);
/// Population standard deviation.
Tensor std_axis(const Tensor& x, int axis);

/// Matrix product over the last two axes. Leading axes broadcast; a 2-D
/// right operand is applied to every leading slice of the left one.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a . b^T over the last two axes, same batching rules as matmul.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// x . weight + bias with weight [in x out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Shares the values of `x` without gradient tracking.
Tensor detach(const Tensor& x);

/// Same values, new shape. Shares storage with `x`.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
/// Slice [start, start + length) along `axis`.
Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t length);

Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
/// Exact GELU, x * Phi(x) with Phi from erf.
Tensor gelu(const Tensor& x);
/// Inverted dropout whose mask is the counter-hashed stream `key`: element i
/// is zeroed when its uniform draw falls below `p`, survivors scale by 1/(1-p).
Tensor dropout(const Tensor& x, double p, std::uint64_t key);

/// Linearly interpolated quantile of the sorted values: with
/// r = (n - 1) q, i = floor(r), f = r - i it returns s[i] + f (s[i+1] - s[i]).
/// Ties keep their original order (stable sort), so the gradient of a
/// repeated value goes to its earlier occurrences first.
Tensor quantile_interp(const Tensor& x, double q, int axis);
/// Rank-1 input, shape [] result.
Tensor quantile_interp(const Tensor& v, double q);

/// Lower middle element, s[floor((n - 1) / 2)]. The gradient goes to the
/// first occurrence of the selected value.
Tensor median_lower(const Tensor& x, int axis);
Tensor median_lower(const Tensor& v);

}  // namespace glaff
