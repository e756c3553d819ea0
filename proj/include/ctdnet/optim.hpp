#pragma once

#include <vector>

#include "ctdnet/autodiff.hpp"
#include "ctdnet/tensor.hpp"

namespace ctdnet {

/// SGD with momentum and decoupled-from-nothing weight decay folded into the
/// gradient:  v <- mu*v + (g + wd*p);  p <- p - lr*v.
struct OptimState {
  double learning_rate = 0.002;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<Tensor> velocity;  // parallel to the parameter list, lazily sized

  void validate() const;
};

/// Core update on one parameter. `velocity` must match `param`'s shape.
void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double learning_rate,
              double momentum, double weight_decay);

/// Updates every parameter from its accumulated graph gradient; a parameter
/// whose grad was never touched this step is treated as zero-gradient.
void sgd_step(const std::vector<ad::Var>& params, OptimState& state);

}  // namespace ctdnet
