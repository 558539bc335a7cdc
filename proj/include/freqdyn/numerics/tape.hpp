// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "freqdyn/numerics/tensor.hpp"

namespace freqdyn {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

/// Reverse-mode autodiff tape.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and backward() simply walks the node list in reverse. When recording is
/// off (e.g. for the mean-teacher forward pass) values are still stored but
/// no backward closures are kept.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const noexcept { return recording_; }

  /// Leaf value. Gradients accumulate into it when requires_grad is set.
  Var leaf(Tensor<T> value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, {}, {},
                          recording_ && requires_grad});
    return Var{nodes_.size() - 1};
  }
  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Record the output of an op. The closure is dropped when no input needs
  /// a gradient.
  Var push(Tensor<T> value, std::vector<Var> inputs, BackwardFn backward) {
    bool needs = false;
    if (recording_) {
      for (Var v : inputs) needs = needs || nodes_[v.id].requires_grad;
    }
    Node node{std::move(value), {}, {}, {}, needs};
    if (needs) {
      node.inputs.reserve(inputs.size());
      for (Var v : inputs) node.inputs.push_back(v.id);
      node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(std::size_t id) const {
    return nodes_.at(id).requires_grad;
  }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  Tensor<T>& grad(Var v) { return grad(v.id); }
  bool has_grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.shape() == n.value.shape() && !n.value.empty();
  }

  /// Input id `k` of node `self`.
  std::size_t input(std::size_t self, std::size_t k) const {
    return nodes_[self].inputs[k];
  }

  /// Seeds d(out)/d(out) = 1 (out must be scalar) and walks the tape back.
  void backward(Var out) {
    if (value(out).size() != 1) {
      throw ShapeError("backward() needs a scalar output, got shape " +
                       shape_str(value(out).shape()));
    }
    grad(out)[0] = T{1};
    backward_from(out);
  }

  /// Walks back from `out` using whatever gradient is already seeded there.
  void backward_from(Var out) {
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.shape() != n.value.shape()) continue;
      n.backward(*this, i);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool recording_ = true;
};

}  // namespace freqdyn
