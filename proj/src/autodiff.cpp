#include "ctdnet/autodiff.hpp"

#include <stdexcept>
#include <unordered_set>

namespace ctdnet::ad {

void Node::accumulate(const Tensor& g) {
  if (!g.same_shape(value)) {
    throw std::logic_error("gradient shape " + g.shape_str() + " does not match value shape " +
                           value.shape_str());
  }
  if (!has_grad()) {
    grad = Tensor::zeros_like(value);
  }
  double* dst = grad.data();
  const double* src = g.data();
  const std::int64_t n = g.size();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

void Node::zero_grad() {
  if (has_grad()) {
    for (std::int64_t i = 0; i < grad.size(); ++i) grad[i] = 0.0;
  }
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = false;
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn,
         const char* op) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p && p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) {
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

void visit(const Var& root, const std::function<void(const Node&)>& fn) {
  std::unordered_set<const Node*> visited;
  std::vector<const Node*> stack{root.get()};
  visited.insert(root.get());
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    fn(*n);
    for (const auto& p : n->parents) {
      if (p && visited.insert(p.get()).second) stack.push_back(p.get());
    }
  }
}

namespace {

// Iterative post-order DFS; graphs are deep enough (unrolled pyramids) that
// recursion depth is worth avoiding.
void topo_sort(const Var& root, std::vector<Node*>& order) {
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace

void backward(const Var& root, const Tensor& seed) {
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  topo_sort(root, order);
  root->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad()) {
      n->backward_fn(*n);
    }
  }
}

void backward(const Var& root) {
  if (root->value.size() != 1) {
    throw std::logic_error("implicit backward seed requires a scalar root, got shape " +
                           root->value.shape_str());
  }
  backward(root, Tensor::full(root->value.shape(), 1.0));
}

}  // namespace ctdnet::ad
