#include "speg/autograd.hpp"

#include <algorithm>
#include <unordered_set>
#include <utility>

#include "speg/errors.hpp"

namespace speg {

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var make_result(Tensor value, std::vector<Var> parents,
                std::function<void(const Tensor&)> backward_fn) {
  Var out(std::move(value), false);
  const bool needs = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p.requires_grad(); });
  if (needs) {
    Node* node = out.node();
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) {
      if (p.defined()) node->parents.push_back(p.ptr());
    }
    node->backward_fn = std::move(backward_fn);
  }
  return out;
}

void accumulate(Tensor& acc, const Tensor& src) {
  if (acc.size() != src.size()) {
    throw ShapeError("gradient accumulation: " + acc.shape().str() + " vs " +
                     src.shape().str());
  }
  double* a = acc.data();
  const double* s = src.data();
  const auto n = static_cast<std::ptrdiff_t>(acc.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) a[i] += s[i];
}

void backward(const Var& root) {
  if (root.value().size() != 1) {
    throw ShapeError("backward() without seed requires a scalar root");
  }
  backward(root, Tensor::scalar(1.0));
}

void backward(const Var& root, const Tensor& seed) {
  if (!root.requires_grad()) return;
  if (seed.shape() != root.shape()) {
    throw ShapeError("backward seed shape " + seed.shape().str() +
                     " does not match root " + root.shape().str());
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  accumulate(root.node()->grad_buffer(), seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(node->grad);
  }
}

}  // namespace speg
