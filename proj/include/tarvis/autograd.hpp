#ifndef TARVIS_AUTOGRAD_HPP
#define TARVIS_AUTOGRAD_HPP

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tarvis/tensor.hpp"

namespace tarvis {

/// One node of the reverse-mode tape. Graphs are DAGs built by the free
/// functions in ops.hpp; backward() walks them in reverse topological order.
template <class S>
struct NodeT {
  using Ptr = std::shared_ptr<NodeT<S>>;

  TensorT<S> value;
  TensorT<S> grad;  // allocated lazily by accum_grad
  bool requires_grad = false;
  std::vector<Ptr> parents;
  std::function<void(NodeT&)> backward_fn;  // reads this->grad, accumulates into parents
  std::string name;

  bool has_grad() const { return grad.size() == value.size() && value.size() > 0; }

  void accum_grad(const TensorT<S>& g) {
    ensure_grad();
    grad.array() += g.array();
  }
  TensorT<S>& ensure_grad() {
    if (grad.size() != value.size()) grad = TensorT<S>::zeros(value.shape());
    return grad;
  }
  void zero_grad() {
    if (grad.size() == value.size()) grad.array().setZero();
  }
};

template <class S>
using VarT = std::shared_ptr<NodeT<S>>;

template <class S>
VarT<S> make_var(TensorT<S> value, bool requires_grad = false, std::string name = {}) {
  auto n = std::make_shared<NodeT<S>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return n;
}

template <class S>
VarT<S> make_const(TensorT<S> value) {
  return make_var<S>(std::move(value), false);
}

/// Tape recording can be switched off wholesale (inference, oracle math).
class GradMode {
 public:
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class S>
bool tape_active(const std::vector<VarT<S>>& vs) {
  if (!GradMode::enabled()) return false;
  for (const auto& v : vs)
    if (v && v->requires_grad) return true;
  return false;
}

/// Parents-before-children ordering of the grad-requiring subgraph.
template <class S>
std::vector<VarT<S>> topo_order(const VarT<S>& root) {
  std::vector<VarT<S>> order;
  std::unordered_set<const NodeT<S>*> pushed;
  std::vector<std::pair<VarT<S>, std::size_t>> stack;
  stack.emplace_back(root, 0);
  pushed.insert(root.get());
  while (!stack.empty()) {
    auto node = stack.back().first;
    std::size_t& child = stack.back().second;
    if (child < node->parents.size()) {
      auto next = node->parents[child++];
      if (next && next->requires_grad && !pushed.count(next.get())) {
        pushed.insert(next.get());
        stack.emplace_back(std::move(next), 0);
      }
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }
  return order;
}

/// Reverse-mode sweep from a scalar root. Accumulates into .grad of every
/// reachable node with requires_grad.
template <class S>
void backward(const VarT<S>& root) {
  if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) return;
  auto order = topo_order(root);
  root->ensure_grad();
  root->grad.array().setConstant(S(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& n = **it;
    if (n.backward_fn && n.has_grad()) n.backward_fn(n);
  }
}

using Node = NodeT<double>;
using Var = VarT<double>;

}  // namespace tarvis

#endif
