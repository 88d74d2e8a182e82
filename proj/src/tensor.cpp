// SPDX-License-Identifier: Apache-2.0
#include "glaff/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "glaff/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace glaff {

namespace {

#if defined(__GLIBC__)
// Activation buffers of a few megabytes are allocated and freed every batch.
// Left to the defaults, glibc serves them with fresh mmaps and pays a page
// fault per 4 KiB on every reuse; keep them on the heap instead.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

thread_local Graph* tls_active_graph = nullptr;

std::shared_ptr<TensorImpl> make_impl(Shape shape) {
  auto impl = std::make_shared<TensorImpl>();
  impl->size = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->storage = std::shared_ptr<double[]>(new double[std::max<std::size_t>(impl->size, 1)]);
  return impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

double* TensorImpl::ensure_grad() {
  if (!grad) {
    grad = std::unique_ptr<double[]>(new double[std::max<std::size_t>(size, 1)]);
    std::fill_n(grad.get(), size, 0.0);
  }
  return grad.get();
}

Tensor Tensor::empty(Shape shape) { return Tensor(make_impl(std::move(shape))); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = empty(std::move(shape));
  std::fill_n(t.impl_->data(), t.impl_->size, value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return from(std::move(shape), std::span<const double>(values));
}

Tensor Tensor::from(Shape shape, std::span<const double> values) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  Tensor t = empty(std::move(shape));
  std::copy(values.begin(), values.end(), t.impl_->data());
  return t;
}

Tensor Tensor::scalar(double value) { return full({}, value); }

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::size(int axis) const {
  const auto& s = shape();
  const int rank = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->size : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) throw UsageError("undefined tensor");
  return {impl_->data(), impl_->size};
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw UsageError("undefined tensor");
  if (!impl_->leaf) throw UsageError("values of a recorded tensor are immutable");
  return {impl_->data(), impl_->size};
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() needs a single-element tensor, got " + shape_str(shape()));
  return impl_->data()[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for shape " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range for shape " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data()[flat];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw UsageError("undefined tensor");
  if (!impl_->leaf) throw UsageError("only leaves can be marked as requiring gradients");
  impl_->requires_grad = on;
  if (on) impl_->ensure_grad();
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (!impl_ || !impl_->grad) return {};
  return {impl_->grad.get(), impl_->size};
}

std::span<double> Tensor::mutable_grad() {
  if (!impl_) throw UsageError("undefined tensor");
  return {impl_->ensure_grad(), impl_->size};
}

void Tensor::zero_grad() {
  if (impl_ && impl_->grad) std::fill_n(impl_->grad.get(), impl_->size, 0.0);
}

Tensor Tensor::clone() const {
  Tensor t = empty(shape());
  std::copy_n(impl_->data(), impl_->size, t.impl_->data());
  return t;
}

void Graph::record(std::vector<std::shared_ptr<TensorImpl>> inputs, std::shared_ptr<TensorImpl> output,
                   Rule rule) {
  if (consumed_) throw UsageError("cannot record into a graph after backward()");
  const std::size_t index = records_.size();
  for (const auto& in : inputs) {
    if (in->leaf) continue;
    if (in->graph != this || in->record_index >= index) {
      throw UsageError("operand was produced by a different or already consumed graph");
    }
  }
  output->leaf = false;
  output->requires_grad = true;
  output->graph = this;
  output->record_index = index;
  records_.push_back(Record{std::move(inputs), std::move(output), std::move(rule)});
}

void Graph::backward(const Tensor& root) {
  if (consumed_) throw UsageError("backward() called twice on the same graph");
  if (!root.defined() || root.numel() != 1) {
    throw UsageError("backward() needs a scalar root, got " +
                     (root.defined() ? shape_str(root.shape()) : std::string("undefined")));
  }
  consumed_ = true;
  TensorImpl* r = root.impl();
  if (r->leaf) {
    if (r->requires_grad) r->ensure_grad()[0] += 1.0;
    records_.clear();
    return;
  }
  if (r->graph != this) throw UsageError("root was not recorded by this graph");
  r->ensure_grad()[0] += 1.0;
  for (std::size_t k = records_.size(); k-- > 0;) {
    Record& rec = records_[k];
    TensorImpl* out = rec.output.get();
    if (out->grad) {
      rec.rule(out->grad.get());
      // Every consumer of `out` sits later on the tape, so its gradient
      // is complete and no longer needed.
      if (out != r) out->grad.reset();
    }
    rec.rule = nullptr;
    rec.inputs.clear();
    rec.output.reset();
  }
  records_.clear();
}

GraphScope::GraphScope(Graph& graph) : previous_(tls_active_graph) { tls_active_graph = &graph; }

GraphScope::~GraphScope() { tls_active_graph = previous_; }

Graph* active_graph() noexcept { return tls_active_graph; }

}  // namespace glaff
