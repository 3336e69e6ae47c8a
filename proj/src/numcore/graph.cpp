#include "metaworld/numcore/graph.hpp"

#include <string>

namespace metaworld::numcore {

template <typename T>
Var<T> Graph<T>::push(Node node) {
  if (check_finite_ && !node.value.all_finite()) {
    throw NumericalError(std::string("non-finite value produced by ") + node.op);
  }
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::variable(Tensor<T> value) {
  Node n;
  n.op = "variable";
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
  Node n;
  n.op = "param";
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  auto v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

template <typename T>
Var<T> Graph<T>::record(const char* op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (auto i : inputs) {
    if (i >= nodes_.size()) throw ShapeError(std::string(op) + ": input does not belong to this graph");
    n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
Tensor<T> Graph<T>::grad(Var<T> v) const {
  const Node& n = nodes_.at(v.id());
  return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor<T>();
  }
  grad_buffer(loss.id())[0] = T(1);

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    // Copy so the callback may allocate sibling grad buffers freely.
    Tensor<T> out_grad = n.grad;
    n.backward(*this, out_grad);
  }

  for (auto& n : nodes_) {
    if (!n.param || !n.has_grad) continue;
    auto& dst = n.param->grad;
    if (dst.shape() != n.value.shape()) dst = Tensor<T>(n.value.shape());
    auto d = dst.data();
    auto s = n.grad.data();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace metaworld::numcore
