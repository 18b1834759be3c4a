#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgdial/tensor.hpp"

namespace kgdial {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::uint32_t id) : graph_(graph), id_(id) {}

  Graph* graph() const noexcept { return graph_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  Real item() const { return value().item(); }

 private:
  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Tape of operations recorded in topological (creation) order. Reverse-mode
/// differentiation walks the tape backwards once.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Owned differentiable leaf.
  Var leaf(Tensor value);
  /// Differentiable leaf that aliases `external`; it must outlive the graph.
  Var watch(const Tensor& external);

  Var record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward);

  /// Populates gradients of every node that `loss` depends on.
  /// Throws UsageError for non-scalar loss.
  void backward(Var loss);

  const Tensor& value(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  /// Gradient of `v`; zeros of the right shape when nothing flowed into it.
  Tensor grad(Var v) const;

  /// Accumulation slot for node `id`, zero-initialised on first use.
  Tensor& grad_slot(std::uint32_t id);
  const Tensor& grad_of(std::uint32_t id) const { return nodes_[id].grad; }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool grad_allocated = false;
    bool requires_grad = false;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

/// Ordered collection of named trainable tensors.
class ParameterSet {
 public:
  std::size_t add(const std::string& name, Tensor init);

  std::size_t size() const noexcept { return tensors_.size(); }
  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const noexcept { return names_; }

  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor& at(std::string_view name) { return tensors_[index(name)]; }
  const Tensor& at(std::string_view name) const { return tensors_[index(name)]; }

  std::size_t scalar_count() const;
  bool all_finite() const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t, std::less<>> lookup_;
};

/// Lazily attaches parameters to a graph, so parameters a computation never
/// touches stay out of the tape and report zero gradient.
class Binding {
 public:
  Binding(Graph& graph, const ParameterSet& params);

  Var operator()(std::size_t index);
  Var operator()(std::string_view name) { return (*this)(params_->index(name)); }

  Graph& graph() noexcept { return *graph_; }
  const ParameterSet& params() const noexcept { return *params_; }

  /// One gradient tensor per parameter, in parameter order.
  std::vector<Tensor> gradients() const;

 private:
  Graph* graph_;
  const ParameterSet* params_;
  std::vector<Var> bound_;
};

namespace ad {

// Elementwise ops require equal shapes. `add` additionally accepts a rank-1
// bias added to every row of a rank-2 left operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Real factor);
/// a * s for a single-element `s`.
Var scale_by(Var a, Var s);
Var add_scalar(Var a, Real offset);
/// 1 - a
Var one_minus(Var a);

/// 2x2 -> matrix product, 2x1 -> matrix-vector, 1x2 -> vector-matrix.
Var matmul(Var a, Var b);
Var transpose(Var a);
/// Same values under a new shape of equal size.
Var reshape(Var a, Shape shape);

/// Concatenate rank-1 tensors, or rank-2 tensors along `axis` (0 rows, 1 cols).
Var concat(std::span<const Var> parts, std::size_t axis = 0);
Var concat(std::initializer_list<Var> parts, std::size_t axis = 0);
/// Leading-axis slice: elements of a vector, rows of a matrix.
Var slice(Var a, std::size_t start, std::size_t length);
Var row(Var a, std::size_t index);
/// Stack equal-length vectors into a matrix.
Var stack(std::span<const Var> rows);

/// Softmax over the last axis (each row of a matrix).
Var softmax(Var a);
Var log_softmax(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
/// log(max(a, floor)); the gradient is zero where the floor is active.
Var log_floor(Var a, Real floor);

Var sum(Var a);
Var mean(Var a);
Var dot(Var a, Var b);
/// Element `index` of a vector as a scalar.
Var pick(Var a, std::size_t index);

/// Rows of `table` selected by `ids`, as a matrix.
Var embedding(Var table, std::span<const std::size_t> ids);
Var embedding_row(Var table, std::size_t id);

/// out[indices[i]] += a[i], out has `size` elements.
Var scatter_add(Var a, std::span<const std::size_t> indices, std::size_t size);

/// Row-wise layer normalisation with learned gain and bias.
Var layer_norm(Var x, Var gain, Var bias, Real eps = 1e-5);

}  // namespace ad
}  // namespace kgdial
