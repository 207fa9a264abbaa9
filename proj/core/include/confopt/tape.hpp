#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "confopt/tensor.hpp"

namespace confopt {

using Var = int;

// Record of primitive operations in topological order. Reverse traversal
// visits each node exactly once and accumulates gradients into its inputs.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor<T> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad});
    return static_cast<Var>(nodes_.size() - 1);
  }

  Var node(Tensor<T> value, std::vector<Var> inputs, BackwardFn backward) {
    bool rg = false;
    for (Var v : inputs) rg = rg || nodes_.at(v).requires_grad;
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), rg});
    return static_cast<Var>(nodes_.size() - 1);
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v).value; }
  bool requires_grad(Var v) const { return nodes_.at(v).requires_grad; }
  size_t size() const { return nodes_.size(); }

  // Gradient of the last backward() w.r.t. node v; zeros when unreachable.
  const Tensor<T>& grad(Var v) {
    auto& g = grads_.at(v);
    if (g.data.empty()) g = Tensor<T>::zeros(nodes_[v].value.shape);
    return g;
  }

  void accumulate(Var v, const Tensor<T>& g) {
    if (!nodes_.at(v).requires_grad) return;
    auto& acc = grads_.at(v);
    if (acc.data.empty()) {
      acc = g;
    } else {
      for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
    }
  }

  // Reverse-mode sweep from a scalar loss.
  void backward(Var loss) {
    if (!nodes_.at(loss).value.is_scalar()) {
      throw std::invalid_argument("backward: loss must be a scalar");
    }
    grads_.assign(nodes_.size(), Tensor<T>{});
    grads_[loss] = Tensor<T>::full(nodes_[loss].value.shape, T(1));
    for (Var v = static_cast<Var>(nodes_.size()) - 1; v >= 0; --v) {
      Node& n = nodes_[v];
      if (!n.requires_grad || !n.backward) continue;
      if (grads_[v].data.empty()) continue;  // unreachable from loss
      n.backward(*this, grads_[v]);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

}  // namespace confopt
