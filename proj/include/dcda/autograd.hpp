#ifndef DCDA_AUTOGRAD_HPP
#define DCDA_AUTOGRAD_HPP

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dcda/tensor.hpp"

namespace dcda {

namespace detail {
inline thread_local bool grad_enabled = true;
}  // namespace detail

[[nodiscard]] inline bool grad_mode_enabled() { return detail::grad_enabled; }

/// Disables graph recording for its lifetime (inference, teacher outputs).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  using BackwardFn = std::function<void(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& out_value)>;

  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  void accumulate(const Tensor<Scalar>& g) {
    if (grad.empty()) {
      grad = g;
    } else {
      grad.array() += g.array();
    }
  }
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.empty()) {
      grad = Tensor<Scalar>(value.shape(), typename Tensor<Scalar>::Storage(g));
    } else {
      grad.array() += g;
    }
  }
};

/// Handle to a node of the dynamic computation graph. Copies share the node.
template <typename Scalar_>
class Var {
 public:
  using Scalar = Scalar_;
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  /// Records an op result. Inputs and the backward closure are kept only when
  /// grad mode is on and at least one input needs a gradient.
  static Var from_op(Tensor<Scalar> value, std::vector<Var> inputs, typename Node<Scalar>::BackwardFn backward) {
    Var out(std::move(value));
    if (!grad_mode_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

  [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
  [[nodiscard]] const Tensor<Scalar>& value() const { return node_->value; }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
  [[nodiscard]] const Tensor<Scalar>& grad() const { return node_->grad; }
  [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
  [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }

  /// In-place access for optimizers and checkpoint loading only.
  Tensor<Scalar>& mutable_value() { return node_->value; }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }
  /// Only meaningful on leaves (parameters): freezes or unfreezes them.
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Same value, cut from the graph.
  [[nodiscard]] Var detach() const { return Var(node_->value); }

  [[nodiscard]] Scalar item() const { return node_->value[0]; }

  [[nodiscard]] const Node<Scalar>* id() const { return node_.get(); }
  [[nodiscard]] const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Reverse-mode sweep from a scalar root. Gradients accumulate into every
/// reachable node; intermediate gradients are released afterwards.
template <typename Scalar>
void backward(const Var<Scalar>& root, Scalar seed = Scalar(1)) {
  if (root.value().size() != 1) throw ShapeError("backward() needs a scalar root, got " + root.shape().str());
  if (!root.requires_grad()) return;

  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<Scalar>* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Tensor<Scalar>(root.shape(), seed));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->grad.empty()) continue;
    node->backward(node->grad, node->value);
    node->grad = Tensor<Scalar>();
  }
}

}  // namespace dcda

#endif  // DCDA_AUTOGRAD_HPP
