#include "timely/autograd.hpp"

#include <unordered_set>

#include "timely/errors.hpp"

namespace timely {

NdArray& Node::grad_buffer() {
  if (!has_grad) {
    grad = NdArray(value.shape());
    has_grad = true;
  }
  return grad;
}

Var::Var(NdArray value, bool requires_grad, std::string name) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->name = std::move(name);
}

NdArray Var::grad() const {
  if (node_->has_grad) return node_->grad;
  return NdArray(node_->value.shape());
}

void Var::zero_grad() {
  if (node_ && node_->has_grad) node_->grad.fill(0.0);
}

Var make_op(NdArray value, const std::vector<Var>& parents, std::function<void(const NdArray&)> backward) {
  Var out(std::move(value), false);
  for (const Var& p : parents) {
    if (p.requires_grad()) {
      out.node_->requires_grad = true;
      break;
    }
  }
  if (out.node_->requires_grad) {
    out.node_->parents.reserve(parents.size());
    for (const Var& p : parents) out.node_->parents.push_back(p.node());
    out.node_->backward_fn = std::move(backward);
  }
  return out;
}

void accumulate_grad(const Var& v, const NdArray& g) {
  if (!v.requires_grad()) return;
  NdArray& buf = v.node()->grad_buffer();
  if (g.shape() != buf.shape()) {
    throw DimensionError("gradient " + shape_str(g.shape()) + " does not match value " + shape_str(buf.shape()));
  }
  double* dst = buf.raw();
  const double* src = g.raw();
  for (std::size_t i = 0; i < buf.size(); ++i) dst[i] += src[i];
}

std::size_t backward(const Var& loss) {
  if (!loss.defined() || !loss.value().is_scalar()) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return 0;

  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward_fn && n->has_grad) n->grad.fill(0.0);
  }
  loss.node()->grad_buffer().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad) n->backward_fn(n->grad);
  }
  return order.size();
}

}  // namespace timely
