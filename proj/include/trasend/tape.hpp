#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "trasend/tensor.hpp"

namespace trasend {

/// Handle to one node on a GradTape.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in execution order, so walking the
/// tape backwards visits a reverse topological order of the graph.
///
/// Each node stores its forward value and, for differentiable nodes, a
/// closure that reads the node's gradient and accumulates into its parents.
/// A tape lives for one forward/backward pass and is then discarded.
template <typename S>
class GradTape {
 public:
  using Backprop = std::function<void(GradTape&)>;

  Var leaf(Tensor<S> value, bool needs_grad = false) {
    return push(std::move(value), needs_grad, nullptr);
  }

  Var push(Tensor<S> value, bool needs_grad, Backprop backprop) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  // Id the next push() will be assigned; lets closures refer to their own node.
  Var next_var() const { return Var{static_cast<int32_t>(nodes_.size())}; }

  const Tensor<S>& val(Var v) const { return node(v).value; }
  bool needs_grad(Var v) const { return node(v).needs_grad; }

  bool has_grad(Var v) const { return node(v).grad.defined(); }

  const Tensor<S>& grad(Var v) const {
    const Node& n = node(v);
    if (!n.grad.defined()) throw StateError("gradient not computed for node " + std::to_string(v.id));
    return n.grad;
  }

  Tensor<S> grad_or_zeros(Var v) const {
    const Node& n = node(v);
    return n.grad.defined() ? n.grad : Tensor<S>::zeros(n.value.shape());
  }

  void accumulate(Var v, const Tensor<S>& g) {
    Node& n = node(v);
    if (!n.needs_grad) return;
    if (!n.value.same_shape(g)) {
      throw ShapeError("gradient shape " + g.shape_str() + " vs value " + n.value.shape_str());
    }
    if (!n.grad.defined()) {
      n.grad = g;
      return;
    }
    S* dst = n.grad.data();
    const S* src = g.data();
    for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
  }

  // Runs the reverse sweep from a scalar loss. Gradients of reachable nodes
  // are left on the tape; query them with grad()/grad_or_zeros().
  void backward(Var loss) {
    Node& top = node(loss);
    if (top.value.numel() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + top.value.shape_str());
    }
    if (!top.needs_grad) return;  // loss does not depend on any tracked input
    top.grad = Tensor<S>::full(top.value.shape(), S(1));
    for (int32_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.grad.defined() && n.backprop) n.backprop(*this);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool needs_grad = false;
    Backprop backprop;
  };

  Node& node(Var v) {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) {
      throw ContractError("invalid tape handle");
    }
    return nodes_[static_cast<size_t>(v.id)];
  }
  const Node& node(Var v) const { return const_cast<GradTape*>(this)->node(v); }

  std::vector<Node> nodes_;
};

/// Per-forward execution context: the tape plus mode and noise source.
/// When attn_probe is set, attention layers append their weight matrices to
/// it (inspection only, no effect on the graph).
template <typename S>
struct Context {
  GradTape<S> tape;
  RunMode mode = RunMode::eval;
  std::mt19937_64 rng{0};
  std::vector<Tensor<S>>* attn_probe = nullptr;
};

}  // namespace trasend
