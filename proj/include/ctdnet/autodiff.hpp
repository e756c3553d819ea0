#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ctdnet/tensor.hpp"

namespace ctdnet::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in the computation graph. The backward_fn of a non-leaf reads
/// this node's accumulated gradient and pushes gradients into its parents.
/// Every backward_fn is the analytic adjoint of the forward kernel that
/// produced the value.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulate
  bool requires_grad = false;
  const char* op = "";  // kernel tag; lets diagnostics and kink scans name nodes
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return grad.size() == value.size(); }
  void accumulate(const Tensor& g);
  void zero_grad();
};

Var constant(Tensor value);
Var parameter(Tensor value);
Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn,
         const char* op = "");

/// Walks the graph and calls fn once per reachable node.
void visit(const Var& root, const std::function<void(const Node&)>& fn);

/// Reverse pass from root, seeding with `seed` (shape must match root).
void backward(const Var& root, const Tensor& seed);
/// Scalar convenience: seeds with 1.
void backward(const Var& root);

}  // namespace ctdnet::ad
