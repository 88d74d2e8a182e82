// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace glaff {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Graph;

/// Shared state behind a Tensor handle. Value storage may be shared
/// between a tensor and its reshaped views; gradients never are.
struct TensorImpl {
  Shape shape;
  std::shared_ptr<double[]> storage;
  std::size_t size = 0;
  std::unique_ptr<double[]> grad;
  bool requires_grad = false;
  bool leaf = true;
  // Set for tensors produced by a recorded operation.
  const Graph* graph = nullptr;
  std::size_t record_index = 0;

  double* data() noexcept { return storage.get(); }
  const double* data() const noexcept { return storage.get(); }
  double* ensure_grad();
};

/// Dense row-major array of doubles with optional gradient tracking.
///
/// Tensors are reference-counted handles: copying a Tensor shares the
/// underlying values. Values are immutable once an operation has produced
/// them; only leaves (parameters) may be written through mutable_data(),
/// and only outside of a recorded forward pass.
class Tensor {
 public:
  Tensor() = default;

  /// Uninitialised storage; callers must write every element.
  static Tensor empty(Shape shape);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor from(Shape shape, std::span<const double> values);
  static Tensor scalar(double value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  /// Negative axes count from the back.
  std::size_t size(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  /// Marks a leaf as trainable and materialises a zero gradient.
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const noexcept { return !impl_ || impl_->leaf; }

  /// Empty span until a gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Deep copy of the values, detached from any graph.
  Tensor clone() const;

  TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared_impl() const noexcept { return impl_; }

  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Tape of recorded operations for one forward pass.
///
/// Operations record themselves into the graph installed by the innermost
/// GraphScope on the calling thread whenever one of their operands
/// requires a gradient. backward() replays the tape in reverse once and
/// then releases it.
class Graph {
 public:
  using Rule = std::function<void(const double* grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Appends a record; `output` becomes a non-leaf owned by this graph.
  void record(std::vector<std::shared_ptr<TensorImpl>> inputs, std::shared_ptr<TensorImpl> output,
              Rule rule);

  /// Accumulates d(root)/d(leaf) into every leaf that requires a gradient.
  /// The root must hold exactly one element.
  void backward(const Tensor& root);

  std::size_t size() const noexcept { return records_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Record {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    Rule rule;
  };
  std::vector<Record> records_;
  bool consumed_ = false;
};

/// Installs a graph as the recording target for the current thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

Graph* active_graph() noexcept;

}  // namespace glaff
