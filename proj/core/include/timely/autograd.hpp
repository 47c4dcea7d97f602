#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "timely/ndarray.hpp"

namespace timely {

// One vertex of the define-by-run tape. A new graph is recorded on every forward pass;
// parameters are the only nodes that outlive it.
struct Node {
  NdArray value;
  NdArray grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives dLoss/dValue and accumulates into the parents.
  std::function<void(const NdArray&)> backward_fn;
  std::string name;

  NdArray& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(NdArray value, bool requires_grad = false, std::string name = {});

  static Var parameter(NdArray value, std::string name) { return Var(std::move(value), true, std::move(name)); }
  static Var constant(NdArray value) { return Var(std::move(value), false); }

  bool defined() const noexcept { return node_ != nullptr; }
  const NdArray& value() const { return node_->value; }
  NdArray& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && node_->has_grad; }
  // Gradient after backward(); zeros if nothing reached this node.
  NdArray grad() const;
  void zero_grad();
  const std::string& name() const { return node_->name; }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_op(NdArray, const std::vector<Var>&, std::function<void(const NdArray&)>);
  std::shared_ptr<Node> node_;
};

// Records a new op. `backward` is dropped when no parent needs gradients.
Var make_op(NdArray value, const std::vector<Var>& parents, std::function<void(const NdArray&)> backward);

// Adds g into v's gradient if v participates in differentiation.
void accumulate_grad(const Var& v, const NdArray& g);

// Reverse sweep from a scalar loss. Returns the number of nodes visited (each exactly once).
std::size_t backward(const Var& loss);

}  // namespace timely
