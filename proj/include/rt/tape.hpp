#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rt/tensor.hpp"

namespace rt {

/// Handle to a node on a Tape. Only meaningful together with the tape that
/// produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode Wengert list. Nodes are appended during the forward pass, so
/// parents always precede children and backward() is a single reverse sweep,
/// deterministic for a fixed forward construction order. A tape is private
/// to one evaluation; concurrent evaluations each own their tape.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  using BackwardFn = std::function<void(Tape&, Var)>;

  Var leaf(Tensor<T> value, bool needs_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, needs_grad, false, {}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }
  Var constant_scalar(T x) { return leaf(Tensor<T>::scalar(x), false); }

  /// Appends an op node. needs_grad is inherited from the parents; the
  /// backward closure is dropped when no parent requires gradients.
  Var push(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn backward) {
    bool ng = false;
    for (Var p : parents) ng = ng || nodes_[p.id].needs_grad;
    nodes_.push_back(Node{std::move(value), {}, ng, false, ng ? std::move(backward) : BackwardFn{}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& val(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient buffer of a node, materialized as zeros on first touch.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_[v.id];
    if (!n.grad_live) {
      n.grad = Tensor<T>(n.value.shape());
      n.grad_live = true;
    }
    return n.grad;
  }

  bool grad_live(Var v) const { return nodes_[v.id].grad_live; }

  /// Gradient of v, or zeros if nothing ever flowed into it.
  Tensor<T> grad_or_zero(Var v) const {
    const Node& n = nodes_[v.id];
    return n.grad_live ? n.grad : Tensor<T>(n.value.shape());
  }

  /// Reverse sweep from a scalar root.
  void backward(Var root) {
    if (val(root).numel() != 1)
      throw std::invalid_argument("backward: root must be scalar, got shape " +
                                  shape_str(val(root).shape()));
    grad(root)[0] = T(1);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.needs_grad && n.grad_live && n.backward) n.backward(*this, Var{id});
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    bool grad_live = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

}  // namespace rt
