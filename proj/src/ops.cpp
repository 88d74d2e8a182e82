// SPDX-License-Identifier: Apache-2.0
#include "glaff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "glaff/error.hpp"
#include "glaff/gemm.hpp"
#include "vecmath.hpp"

namespace glaff {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

template <class Rule>
void record(const Tensor& out, std::vector<ImplPtr> inputs, Rule&& rule) {
  Graph* graph = active_graph();
  if (graph == nullptr) return;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const ImplPtr& in) { return in->requires_grad; });
  if (!any) return;
  graph->record(std::move(inputs), out.shared_impl(), Graph::Rule(std::forward<Rule>(rule)));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined operand");
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
  s.len = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t d = shape.size(); d-- > 1;) strides[d - 1] = strides[d] * shape[d];
  return strides;
}

// Visits every element of `out` in row-major order as f(flat_out, off_a, off_b).
template <class F>
void walk2(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t total = shape_numel(out);
  if (total == 0) return;
  const std::size_t rank = out.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = out[rank - 1];
  const std::size_t ia_step = sa[rank - 1];
  const std::size_t ib_step = sb[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, ia + j * ia_step, ib + j * ib_step);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> sa;
  std::vector<std::size_t> sb;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  const auto fa = contiguous_strides(a);
  const auto fb = contiguous_strides(b);
  Broadcast p;
  p.out.resize(rank);
  p.sa.assign(rank, 0);
  p.sb.assign(rank, 0);
  for (std::size_t d = 0; d < rank; ++d) {
    const bool has_a = d >= rank - a.size();
    const bool has_b = d >= rank - b.size();
    const std::size_t da = has_a ? a[d - (rank - a.size())] : 1;
    const std::size_t db = has_b ? b[d - (rank - b.size())] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[d] = da == 1 ? db : da;
    if (has_a && da != 1) p.sa[d] = fa[d - (rank - a.size())];
    if (has_b && db != 1) p.sb[d] = fb[d - (rank - b.size())];
  }
  return p;
}

enum class BinaryKind { add, sub, mul, div };

const char* binary_name(BinaryKind k) {
  switch (k) {
    case BinaryKind::add: return "add";
    case BinaryKind::sub: return "sub";
    case BinaryKind::mul: return "mul";
    case BinaryKind::div: return "div";
  }
  return "binary";
}

inline double apply(BinaryKind k, double x, double y) {
  switch (k) {
    case BinaryKind::add: return x + y;
    case BinaryKind::sub: return x - y;
    case BinaryKind::mul: return x * y;
    case BinaryKind::div: return x / y;
  }
  return 0.0;
}

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const char* name = binary_name(kind);
  require_defined(a, name);
  require_defined(b, name);
  ImplPtr ai = a.shared_impl();
  ImplPtr bi = b.shared_impl();
  const double* x = ai->data();
  const double* y = bi->data();

  if (a.shape() == b.shape()) {
    Tensor out = Tensor::empty(a.shape());
    double* z = out.impl()->data();
    const std::size_t n = out.numel();
    switch (kind) {
      case BinaryKind::add: for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + y[i]; break;
      case BinaryKind::sub: for (std::size_t i = 0; i < n; ++i) z[i] = x[i] - y[i]; break;
      case BinaryKind::mul: for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * y[i]; break;
      case BinaryKind::div: for (std::size_t i = 0; i < n; ++i) z[i] = x[i] / y[i]; break;
    }
    record(out, {ai, bi}, [ai, bi, kind, n](const double* g) {
      const double* x = ai->data();
      const double* y = bi->data();
      if (ai->requires_grad) {
        double* ga = ai->ensure_grad();
        switch (kind) {
          case BinaryKind::add:
          case BinaryKind::sub: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i]; break;
          case BinaryKind::mul: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i]; break;
          case BinaryKind::div: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / y[i]; break;
        }
      }
      if (bi->requires_grad) {
        double* gb = bi->ensure_grad();
        switch (kind) {
          case BinaryKind::add: for (std::size_t i = 0; i < n; ++i) gb[i] += g[i]; break;
          case BinaryKind::sub: for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i]; break;
          case BinaryKind::mul: for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * x[i]; break;
          case BinaryKind::div:
            for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i] * x[i] / (y[i] * y[i]);
            break;
        }
      }
    });
    return out;
  }

  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape(), name));
  Tensor out = Tensor::empty(plan->out);
  double* z = out.impl()->data();
  walk2(plan->out, plan->sa, plan->sb,
        [&](std::size_t o, std::size_t ia, std::size_t ib) { z[o] = apply(kind, x[ia], y[ib]); });
  record(out, {ai, bi}, [ai, bi, kind, plan](const double* g) {
    const double* x = ai->data();
    const double* y = bi->data();
    double* ga = ai->requires_grad ? ai->ensure_grad() : nullptr;
    double* gb = bi->requires_grad ? bi->ensure_grad() : nullptr;
    walk2(plan->out, plan->sa, plan->sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      switch (kind) {
        case BinaryKind::add:
          if (ga) ga[ia] += g[o];
          if (gb) gb[ib] += g[o];
          break;
        case BinaryKind::sub:
          if (ga) ga[ia] += g[o];
          if (gb) gb[ib] -= g[o];
          break;
        case BinaryKind::mul:
          if (ga) ga[ia] += g[o] * y[ib];
          if (gb) gb[ib] += g[o] * x[ia];
          break;
        case BinaryKind::div:
          if (ga) ga[ia] += g[o] / y[ib];
          if (gb) gb[ib] -= g[o] * x[ia] / (y[ib] * y[ib]);
          break;
      }
    });
  });
  return out;
}

Tensor affine_unary(const Tensor& x, double factor, double offset, const char* name) {
  require_defined(x, name);
  ImplPtr xi = x.shared_impl();
  Tensor out = Tensor::empty(x.shape());
  const std::size_t n = out.numel();
  const double* src = xi->data();
  double* dst = out.impl()->data();
  for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] * factor + offset;
  record(out, {xi}, [xi, factor, n](const double* g) {
    double* gx = xi->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * factor;
  });
  return out;
}

Tensor matmul_impl(const Tensor& a, const Tensor& b, bool transpose_b, const char* name) {
  require_defined(a, name);
  require_defined(b, name);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw DimensionError(std::string(name) + ": operands need rank >= 2, got " + shape_str(as) + " and " +
                         shape_str(bs));
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t kb = transpose_b ? bs.back() : bs[bs.size() - 2];
  const std::size_t n = transpose_b ? bs[bs.size() - 2] : bs.back();
  if (k != kb) {
    throw DimensionError(std::string(name) + ": inner dimensions differ for " + shape_str(as) + " and " +
                         shape_str(bs));
  }
  ImplPtr ai = a.shared_impl();
  ImplPtr bi = b.shared_impl();
  const bool tb = transpose_b;

  if (bs.size() == 2) {
    // One right operand for every leading slice: a single tall product.
    const std::size_t rows_all = shape_numel(Shape(as.begin(), as.end() - 1));
    Shape os(as.begin(), as.end() - 1);
    os.push_back(n);
    Tensor out = Tensor::empty(os);
    gemm(false, tb, rows_all, n, k, ai->data(), bi->data(), out.impl()->data(), false);
    record(out, {ai, bi}, [ai, bi, tb, rows_all, n, k](const double* g) {
      if (ai->requires_grad) {
        // dA = dC . op(B)^T
        gemm(false, !tb, rows_all, k, n, g, bi->data(), ai->ensure_grad(), true);
      }
      if (bi->requires_grad) {
        if (!tb) gemm(true, false, k, n, rows_all, ai->data(), g, bi->ensure_grad(), true);
        else gemm(true, false, n, k, rows_all, g, ai->data(), bi->ensure_grad(), true);
      }
    });
    return out;
  }

  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a_batch, b_batch, name));
  Shape os = plan->out;
  os.push_back(m);
  os.push_back(n);
  Tensor out = Tensor::empty(os);
  const std::size_t a_mat = m * k;
  const std::size_t b_mat = k * n;
  const std::size_t c_mat = m * n;
  {
    const double* A = ai->data();
    const double* B = bi->data();
    double* C = out.impl()->data();
    // walk2 strides are in elements of the batch shapes; scale to matrices.
    walk2(plan->out, plan->sa, plan->sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      gemm(false, tb, m, n, k, A + ia * a_mat, B + ib * b_mat, C + o * c_mat, false);
    });
  }
  record(out, {ai, bi}, [ai, bi, tb, plan, m, n, k, a_mat, b_mat, c_mat](const double* g) {
    const double* A = ai->data();
    const double* B = bi->data();
    double* gA = ai->requires_grad ? ai->ensure_grad() : nullptr;
    double* gB = bi->requires_grad ? bi->ensure_grad() : nullptr;
    walk2(plan->out, plan->sa, plan->sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      const double* G = g + o * c_mat;
      if (gA) gemm(false, !tb, m, k, n, G, B + ib * b_mat, gA + ia * a_mat, true);
      if (gB) {
        if (!tb) gemm(true, false, k, n, m, A + ia * a_mat, G, gB + ib * b_mat, true);
        else gemm(true, false, n, k, m, G, A + ia * a_mat, gB + ib * b_mat, true);
      }
    });
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::div); }
Tensor neg(const Tensor& x) { return affine_unary(x, -1.0, 0.0, "neg"); }
Tensor scale(const Tensor& x, double factor) { return affine_unary(x, factor, 0.0, "scale"); }
Tensor add_scalar(const Tensor& x, double value) { return affine_unary(x, 1.0, value, "add_scalar"); }

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  ImplPtr xi = x.shared_impl();
  const std::size_t n = x.numel();
  const double* src = xi->data();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += src[i];
  Tensor out = Tensor::scalar(s);
  record(out, {xi}, [xi, n](const double* g) {
    double* gx = xi->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
  });
  return out;
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.numel() == 0) throw DataError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  require_defined(prediction, "mse_loss");
  require_defined(target, "mse_loss");
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse_loss: shapes " + shape_str(prediction.shape()) + " and " +
                         shape_str(target.shape()) + " differ");
  }
  const std::size_t n = prediction.numel();
  if (n == 0) throw DataError("mse_loss: empty tensors");
  ImplPtr pi = prediction.shared_impl();
  ImplPtr ti = target.shared_impl();
  const double* p = pi->data();
  const double* t = ti->data();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = p[i] - t[i];
    s += e * e;
  }
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  record(out, {pi, ti}, [pi, ti, n](const double* g) {
    const double* p = pi->data();
    const double* t = ti->data();
    const double c = 2.0 * g[0] / static_cast<double>(n);
    double* gp = pi->requires_grad ? pi->ensure_grad() : nullptr;
    double* gt = ti->requires_grad ? ti->ensure_grad() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = c * (p[i] - t[i]);
      if (gp) gp[i] += e;
      if (gt) gt[i] -= e;
    }
  });
  return out;
}

Tensor mean_axis(const Tensor& x, int axis) {
  require_defined(x, "mean_axis");
  const std::size_t ax = normalize_axis(axis, x.dim(), "mean_axis");
  const AxisSplit s = split_axis(x.shape(), ax);
  if (s.len == 0) throw DataError("mean_axis: empty axis");
  Shape os = x.shape();
  os[ax] = 1;
  Tensor out = Tensor::empty(os);
  ImplPtr xi = x.shared_impl();
  const double* src = xi->data();
  double* dst = out.impl()->data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) acc += src[(o * s.len + j) * s.inner + i];
      dst[o * s.inner + i] = acc / static_cast<double>(s.len);
    }
  }
  record(out, {xi}, [xi, s](const double* g) {
    double* gx = xi->ensure_grad();
    const double inv = 1.0 / static_cast<double>(s.len);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.len; ++j)
        for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.len + j) * s.inner + i] += g[o * s.inner + i] * inv;
  });
  return out;
}

Tensor std_axis(const Tensor& x, int axis) {
  require_defined(x, "std_axis");
  const std::size_t ax = normalize_axis(axis, x.dim(), "std_axis");
  const AxisSplit s = split_axis(x.shape(), ax);
  if (s.len == 0) throw DataError("std_axis: empty axis");
  Shape os = x.shape();
  os[ax] = 1;
  Tensor out = Tensor::empty(os);
  ImplPtr xi = x.shared_impl();
  const double* src = xi->data();
  double* dst = out.impl()->data();
  auto means = std::make_shared<std::vector<double>>(s.outer * s.inner);
  const double inv = 1.0 / static_cast<double>(s.len);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double m = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) m += src[(o * s.len + j) * s.inner + i];
      m *= inv;
      double v = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double d = src[(o * s.len + j) * s.inner + i] - m;
        v += d * d;
      }
      (*means)[o * s.inner + i] = m;
      dst[o * s.inner + i] = std::sqrt(v * inv);
    }
  }
  ImplPtr oi = out.shared_impl();
  record(out, {xi}, [xi, oi, s, means, inv](const double* g) {
    double* gx = xi->ensure_grad();
    const double* src = xi->data();
    const double* sd = oi->data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t r = o * s.inner + i;
        if (sd[r] == 0.0) continue;
        const double c = g[r] * inv / sd[r];
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t at = (o * s.len + j) * s.inner + i;
          gx[at] += c * (src[at] - (*means)[r]);
        }
      }
    }
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, false, "matmul"); }
Tensor matmul_nt(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, true, "matmul_nt"); }

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_defined(x, "linear");
  require_defined(weight, "linear");
  if (weight.dim() != 2) throw DimensionError("linear: weight must be 2-D, got " + shape_str(weight.shape()));
  if (x.dim() < 1) throw DimensionError("linear: input must have rank >= 1");
  const std::size_t in = weight.shape()[0];
  const std::size_t outd = weight.shape()[1];
  if (x.shape().back() != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.dim() != 1 || bias.shape()[0] != outd)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t rows = shape_numel(Shape(x.shape().begin(), x.shape().end() - 1));
  Shape os(x.shape().begin(), x.shape().end() - 1);
  os.push_back(outd);
  Tensor out = Tensor::empty(os);
  ImplPtr xi = x.shared_impl();
  ImplPtr wi = weight.shared_impl();
  ImplPtr bi = bias.defined() ? bias.shared_impl() : nullptr;
  double* y = out.impl()->data();
  if (bi) {
    const double* b = bi->data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(b, outd, y + r * outd);
  }
  gemm(false, false, rows, outd, in, xi->data(), wi->data(), y, bi != nullptr);
  std::vector<ImplPtr> inputs{xi, wi};
  if (bi) inputs.push_back(bi);
  record(out, std::move(inputs), [xi, wi, bi, rows, in, outd](const double* g) {
    if (xi->requires_grad) gemm(false, true, rows, in, outd, g, wi->data(), xi->ensure_grad(), true);
    if (wi->requires_grad) gemm(true, false, in, outd, rows, xi->data(), g, wi->ensure_grad(), true);
    if (bi && bi->requires_grad) {
      double* gb = bi->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g + r * outd;
        for (std::size_t j = 0; j < outd; ++j) gb[j] += gr[j];
      }
    }
  });
  return out;
}

Tensor detach(const Tensor& x) {
  require_defined(x, "detach");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = x.shape();
  impl->storage = x.impl()->storage;
  impl->size = x.impl()->size;
  return Tensor(std::move(impl));
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->storage = x.impl()->storage;
  impl->size = x.numel();
  Tensor out(std::move(impl));
  ImplPtr xi = x.shared_impl();
  const std::size_t n = x.numel();
  record(out, {xi}, [xi, n](const double* g) {
    double* gx = xi->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
  });
  return out;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  require_defined(x, "permute");
  const Shape& in = x.shape();
  if (order.size() != in.size()) throw DimensionError("permute: order rank differs from " + shape_str(in));
  std::vector<bool> seen(in.size(), false);
  for (auto d : order) {
    if (d >= in.size() || seen[d]) throw DimensionError("permute: invalid axis order");
    seen[d] = true;
  }
  const auto in_strides = contiguous_strides(in);
  auto os = std::make_shared<Shape>(in.size());
  auto strides = std::make_shared<std::vector<std::size_t>>(in.size());
  for (std::size_t d = 0; d < in.size(); ++d) {
    (*os)[d] = in[order[d]];
    (*strides)[d] = in_strides[order[d]];
  }
  Tensor out = Tensor::empty(*os);
  ImplPtr xi = x.shared_impl();
  const double* src = xi->data();
  double* dst = out.impl()->data();
  const std::vector<std::size_t> zero(in.size(), 0);
  walk2(*os, *strides, zero, [&](std::size_t o, std::size_t i, std::size_t) { dst[o] = src[i]; });
  record(out, {xi}, [xi, os, strides](const double* g) {
    double* gx = xi->ensure_grad();
    const std::vector<std::size_t> zero(os->size(), 0);
    walk2(*os, *strides, zero, [&](std::size_t o, std::size_t i, std::size_t) { gx[i] += g[o]; });
  });
  return out;
}

Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  require_defined(x, "narrow");
  const std::size_t ax = normalize_axis(axis, x.dim(), "narrow");
  const AxisSplit s = split_axis(x.shape(), ax);
  if (start + length > s.len) {
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis of size " + std::to_string(s.len));
  }
  Shape os = x.shape();
  os[ax] = length;
  Tensor out = Tensor::empty(os);
  ImplPtr xi = x.shared_impl();
  const double* src = xi->data();
  double* dst = out.impl()->data();
  const std::size_t chunk = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(src + (o * s.len + start) * s.inner, chunk, dst + o * chunk);
  }
  record(out, {xi}, [xi, s, start, chunk](const double* g) {
    double* gx = xi->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = gx + (o * s.len + start) * s.inner;
      const double* src = g + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  require_defined(x, "softmax_lastdim");
  if (x.dim() == 0 || x.shape().back() == 0) throw DimensionError("softmax_lastdim: empty last axis");
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.numel() / k;
  ImplPtr xi = x.shared_impl();
  Tensor out = Tensor::empty(x.shape());
  const double* src = xi->data();
  double* dst = out.impl()->data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = src + r * k;
    double* y = dst + r * k;
    double mx = in[0];
    bool nan = false;
    for (std::size_t j = 0; j < k; ++j) {
      nan |= in[j] != in[j];
      mx = std::max(mx, in[j]);
    }
    if (nan) throw DataError("softmax_lastdim: NaN in input");
    for (std::size_t j = 0; j < k; ++j) y[j] = in[j] - mx;
  }
  vec::exp(dst, dst, rows * k);
  for (std::size_t r = 0; r < rows; ++r) {
    double* y = dst + r * k;
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += y[j];
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < k; ++j) y[j] *= inv;
  }
  std::shared_ptr<double[]> ys = out.impl()->storage;
  record(out, {xi}, [xi, ys, rows, k](const double* g) {
    double* gx = xi->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = ys.get() + r * k;
      const double* gr = g + r * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += gr[j] * y[j];
      double* gxr = gx + r * k;
      for (std::size_t j = 0; j < k; ++j) gxr[j] += y[j] * (gr[j] - dot);
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  require_defined(gain, "layer_norm");
  require_defined(bias, "layer_norm");
  if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");
  if (x.dim() == 0 || x.shape().back() == 0) throw DimensionError("layer_norm: empty last axis");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " do not match input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  ImplPtr xi = x.shared_impl();
  ImplPtr gi = gain.shared_impl();
  ImplPtr bi = bias.shared_impl();
  Tensor out = Tensor::empty(x.shape());
  auto xhat = std::shared_ptr<double[]>(new double[rows * d]);
  auto rstd = std::shared_ptr<double[]>(new double[std::max<std::size_t>(rows, 1)]);
  const double* src = xi->data();
  const double* gm = gi->data();
  const double* bt = bi->data();
  double* dst = out.impl()->data();
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = src + r * d;
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += in[j];
    m *= inv_d;
    double v = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = in[j] - m;
      v += c * c;
    }
    v *= inv_d;
    const double rs = 1.0 / std::sqrt(v + eps);
    rstd[r] = rs;
    double* xh = xhat.get() + r * d;
    double* y = dst + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (in[j] - m) * rs;
      y[j] = xh[j] * gm[j] + bt[j];
    }
  }
  record(out, {xi, gi, bi}, [xi, gi, bi, xhat, rstd, rows, d, inv_d](const double* g) {
    const double* gm = gi->data();
    double* gx = xi->requires_grad ? xi->ensure_grad() : nullptr;
    double* gg = gi->requires_grad ? gi->ensure_grad() : nullptr;
    double* gb = bi->requires_grad ? bi->ensure_grad() : nullptr;
    std::vector<double> dxh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g + r * d;
      const double* xh = xhat.get() + r * d;
      if (gg) for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xh[j];
      if (gb) for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
      if (!gx) continue;
      double mean_dxh = 0.0;
      double mean_dxh_xh = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dxh[j] = gr[j] * gm[j];
        mean_dxh += dxh[j];
        mean_dxh_xh += dxh[j] * xh[j];
      }
      mean_dxh *= inv_d;
      mean_dxh_xh *= inv_d;
      double* gxr = gx + r * d;
      for (std::size_t j = 0; j < d; ++j) gxr[j] += rstd[r] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
    }
  });
  return out;
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  const std::size_t n = x.numel();
  ImplPtr xi = x.shared_impl();
  Tensor out = Tensor::empty(x.shape());
  auto cdf = std::shared_ptr<double[]>(new double[std::max<std::size_t>(n, 1)]);
  const double* src = xi->data();
  double* dst = out.impl()->data();
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (std::size_t i = 0; i < n; ++i) cdf[i] = src[i] * inv_sqrt2;
  vec::erf(cdf.get(), cdf.get(), n);
  for (std::size_t i = 0; i < n; ++i) {
    cdf[i] = 0.5 * (1.0 + cdf[i]);
    dst[i] = src[i] * cdf[i];
  }
  record(out, {xi}, [xi, cdf, n](const double* g) {
    double* gx = xi->ensure_grad();
    const double* src = xi->data();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    std::vector<double> pdf(n);
    for (std::size_t i = 0; i < n; ++i) pdf[i] = -0.5 * src[i] * src[i];
    vec::exp(pdf.data(), pdf.data(), n);
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (cdf[i] + src[i] * (inv_sqrt_2pi * pdf[i]));
  });
  return out;
}

Tensor dropout(const Tensor& x, double p, std::uint64_t key) {
  require_defined(x, "dropout");
  if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout: rate must lie in [0, 1), got " + std::to_string(p));
  if (p == 0.0) return x;
  const std::size_t n = x.numel();
  ImplPtr xi = x.shared_impl();
  Tensor out = Tensor::empty(x.shape());
  const double keep = 1.0 / (1.0 - p);
  const double* src = xi->data();
  double* dst = out.impl()->data();
  for (std::size_t i = 0; i < n; ++i) dst[i] = vec::hashed_uniform(key, i) < p ? 0.0 : src[i] * keep;
  record(out, {xi}, [xi, n, p, keep, key](const double* g) {
    double* gx = xi->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) gx[i] += vec::hashed_uniform(key, i) < p ? 0.0 : g[i] * keep;
  });
  return out;
}

Tensor quantile_interp(const Tensor& x, double q, int axis) {
  require_defined(x, "quantile_interp");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile_interp: q must lie in [0, 1], got " + std::to_string(q));
  const std::size_t ax = normalize_axis(axis, x.dim(), "quantile_interp");
  const AxisSplit s = split_axis(x.shape(), ax);
  if (s.len == 0) throw DataError("quantile_interp: empty input");
  Shape os = x.shape();
  os[ax] = 1;
  Tensor out = Tensor::empty(os);
  const std::size_t slices = s.outer * s.inner;
  struct Pick {
    std::size_t lo, hi;
    double w_lo, w_hi;
  };
  auto picks = std::make_shared<std::vector<Pick>>(slices);
  ImplPtr xi = x.shared_impl();
  const double* src = xi->data();
  double* dst = out.impl()->data();
  std::vector<double> vals(s.len);
  std::vector<std::size_t> order(s.len);
  const double rank = static_cast<double>(s.len - 1) * q;
  const auto lower = static_cast<std::size_t>(std::floor(rank));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      for (std::size_t j = 0; j < s.len; ++j) {
        vals[j] = src[(o * s.len + j) * s.inner + i];
        if (std::isnan(vals[j])) throw DataError("quantile_interp: NaN in input");
      }
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
      const auto flat = [&](std::size_t j) { return (o * s.len + j) * s.inner + i; };
      const std::size_t r = o * s.inner + i;
      if (lower + 1 < s.len) {
        const double frac = rank - static_cast<double>(lower);
        const double lo = vals[order[lower]];
        const double hi = vals[order[lower + 1]];
        dst[r] = lo + frac * (hi - lo);
        (*picks)[r] = Pick{flat(order[lower]), flat(order[lower + 1]), 1.0 - frac, frac};
      } else {
        dst[r] = vals[order[lower]];
        (*picks)[r] = Pick{flat(order[lower]), flat(order[lower]), 1.0, 0.0};
      }
    }
  }
  record(out, {xi}, [xi, picks](const double* g) {
    double* gx = xi->ensure_grad();
    for (std::size_t r = 0; r < picks->size(); ++r) {
      const Pick& p = (*picks)[r];
      gx[p.lo] += p.w_lo * g[r];
      gx[p.hi] += p.w_hi * g[r];
    }
  });
  return out;
}

Tensor quantile_interp(const Tensor& v, double q) {
  require_defined(v, "quantile_interp");
  if (v.dim() != 1) throw DimensionError("quantile_interp: expected a vector, got " + shape_str(v.shape()));
  return reshape(quantile_interp(v, q, 0), {});
}

Tensor median_lower(const Tensor& x, int axis) {
  require_defined(x, "median_lower");
  const std::size_t ax = normalize_axis(axis, x.dim(), "median_lower");
  const AxisSplit s = split_axis(x.shape(), ax);
  if (s.len == 0) throw DataError("median_lower: empty input");
  Shape os = x.shape();
  os[ax] = 1;
  Tensor out = Tensor::empty(os);
  const std::size_t slices = s.outer * s.inner;
  auto picks = std::make_shared<std::vector<std::size_t>>(slices);
  ImplPtr xi = x.shared_impl();
  const double* src = xi->data();
  double* dst = out.impl()->data();
  std::vector<double> vals(s.len);
  std::vector<double> work(s.len);
  const std::size_t mid = (s.len - 1) / 2;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      for (std::size_t j = 0; j < s.len; ++j) {
        vals[j] = src[(o * s.len + j) * s.inner + i];
        if (std::isnan(vals[j])) throw DataError("median_lower: NaN in input");
      }
      work = vals;
      std::nth_element(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(mid), work.end());
      const double m = work[mid];
      const std::size_t first =
          static_cast<std::size_t>(std::find(vals.begin(), vals.end(), m) - vals.begin());
      const std::size_t r = o * s.inner + i;
      dst[r] = m;
      (*picks)[r] = (o * s.len + first) * s.inner + i;
    }
  }
  record(out, {xi}, [xi, picks](const double* g) {
    double* gx = xi->ensure_grad();
    for (std::size_t r = 0; r < picks->size(); ++r) gx[(*picks)[r]] += g[r];
  });
  return out;
}

Tensor median_lower(const Tensor& v) {
  require_defined(v, "median_lower");
  if (v.dim() != 1) throw DimensionError("median_lower: expected a vector, got " + shape_str(v.shape()));
  return reshape(median_lower(v, 0), {});
}

}  // namespace glaff
