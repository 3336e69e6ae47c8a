#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "metaworld/numcore/tensor.hpp"

namespace metaworld::numcore {

// A named trainable tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    else grad.fill(T(0));
  }
};

template <typename T>
class Graph;

// Handle to a node in a Graph. Cheap to copy; only valid while its graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Tape of operations in topological order. Nodes are appended as the forward
// pass runs; backward walks the tape in reverse.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_grad)>;

  // With check_finite set, every recorded value is scanned and a non-finite
  // entry raises NumericalError naming the producing primitive.
  explicit Graph(bool check_finite = false) : check_finite_(check_finite) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  // A leaf that receives a gradient but is not tied to a Parameter.
  Var<T> variable(Tensor<T> value);
  // Leaf bound to a parameter; backward adds dLoss/dParam into param.grad.
  // Repeated calls with the same parameter return the same node.
  Var<T> param(Parameter<T>& p);

  Var<T> record(const char* op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward);

  // Requires a single-element loss. Parameter gradients are accumulated
  // (added), so callers zero them between steps.
  void backward(Var<T> loss);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor<T>& value(Var<T> v) const { return value(v.id()); }
  // Gradient of the last backward pass with respect to a node; zeros if the
  // node was not reached.
  Tensor<T> grad(Var<T> v) const;

  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Zero-initialised on first access.
  Tensor<T>& grad_buffer(std::size_t id);

  std::size_t size() const noexcept { return nodes_.size(); }
  const char* op_name(std::size_t id) const { return nodes_.at(id).op; }

 private:
  struct Node {
    const char* op = "";
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  bool check_finite_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph_->value(id_);
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace metaworld::numcore
