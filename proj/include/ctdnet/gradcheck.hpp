#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctdnet/autodiff.hpp"
#include "ctdnet/tensor.hpp"

namespace ctdnet {

/// A differentiable operation as a forward/backward contract over plain
/// tensors. `backward` returns one gradient per input for a given upstream
/// gradient; grad_check verifies it against central finite differences.
///
/// forward_signed, when set, evaluates the same function while reporting the
/// activation pattern of every piecewise-linear branch (relu signs). A
/// central difference whose two endpoints disagree in pattern straddles a
/// kink where the estimator is invalid; grad_check skips such probes instead
/// of comparing garbage.
struct DiffOp {
  std::string name;
  std::function<Tensor(const std::vector<Tensor>&)> forward;
  std::function<std::vector<Tensor>(const std::vector<Tensor>&, const Tensor&)> backward;
  std::function<Tensor(const std::vector<Tensor>&, std::vector<signed char>*)> forward_signed;
};

/// Appends one sign per element of every relu pre-activation in the graph.
void collect_relu_signs(const ad::Var& root, std::vector<signed char>& signs);

/// Wrap a graph-building function as a DiffOp; the backward contract is the
/// autodiff reverse pass over leaf inputs.
DiffOp graph_diff_op(std::string name,
                     std::function<ad::Var(const std::vector<ad::Var>&)> build);

struct GradCheckOptions {
  double step = 1e-3;          // central-difference step
  int max_probes_per_input = 0;  // 0 = probe every element
  std::uint64_t seed = 17;       // projection vector + probe subsampling
};

struct GradCheckResult {
  std::string op;
  std::vector<double> max_rel_err;  // one entry per input
  double worst = 0.0;
  bool pass = false;
  int probes = 0;
  int skipped_kinks = 0;  // central differences that straddled a relu kink
  std::string detail;     // failure location, set when a gradient is non-finite
};

/// Projects the (possibly tensor-valued) output onto a fixed random direction
/// and compares analytic against numeric directional derivatives, element by
/// element. Relative error is |a-n| / max(1, |a|, |n|).
GradCheckResult grad_check(const DiffOp& op, const std::vector<Tensor>& inputs, double tol,
                           const GradCheckOptions& opts = {});

std::string format_report(const GradCheckResult& r);

}  // namespace ctdnet
