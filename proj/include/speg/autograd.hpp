#pragma once

// Minimal tape-free reverse-mode autodiff. Each op result holds shared
// pointers to its inputs and a closure that pushes the output gradient into
// them; backward() walks the graph in reverse topological order. Results
// of ops whose inputs need no gradient carry no closure, so inference
// builds no graph.

#include <functional>
#include <memory>
#include <vector>

#include "speg/tensor.hpp"

namespace speg {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor& grad_out)> backward_fn;

  // Allocates the gradient buffer on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Zero tensor of the value's shape when no gradient has flowed.
  Tensor grad() const;
  Tensor& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Wraps an op result. The closure is stored only if some parent requires
// a gradient.
Var make_result(Tensor value, std::vector<Var> parents,
                std::function<void(const Tensor& grad_out)> backward_fn);

// While alive, op results on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Seeds d(root)/d(root) = 1 for a scalar root.
void backward(const Var& root);
void backward(const Var& root, const Tensor& seed);

// Elementwise acc += src.
void accumulate(Tensor& acc, const Tensor& src);

}  // namespace speg
