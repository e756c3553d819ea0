#include "ctdnet/optim.hpp"

#include <stdexcept>

namespace ctdnet {

void OptimState::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be nonnegative");
}

void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double learning_rate,
              double momentum, double weight_decay) {
  if (!param.same_shape(grad)) {
    throw std::invalid_argument("sgd_step: grad shape " + grad.shape_str() +
                                " does not match param shape " + param.shape_str());
  }
  if (!param.same_shape(velocity)) {
    throw std::invalid_argument("sgd_step: velocity shape " + velocity.shape_str() +
                                " does not match param shape " + param.shape_str());
  }
  const std::int64_t n = param.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double g = grad[i] + weight_decay * param[i];
    velocity[i] = momentum * velocity[i] + g;
    param[i] -= learning_rate * velocity[i];
  }
}

void sgd_step(const std::vector<ad::Var>& params, OptimState& state) {
  state.validate();
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const auto& p : params) state.velocity.push_back(Tensor::zeros_like(p->value));
  }
  if (state.velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: velocity count does not match parameter count");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const Tensor grad = p->has_grad() ? p->grad : Tensor::zeros_like(p->value);
    sgd_step(p->value, grad, state.velocity[i], state.learning_rate, state.momentum,
             state.weight_decay);
  }
}

}  // namespace ctdnet
