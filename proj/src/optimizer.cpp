#include "musanet/optimizer.hpp"

#include <cmath>

#include "musanet/errors.hpp"

namespace musanet {

void RmsPropConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("RMSprop decay must lie in (0, 1)");
  if (!(epsilon >= 0.0)) throw ConfigError("RMSprop epsilon must be nonnegative");
}

OptimizerState make_optimizer_state(std::span<Tensor* const> params) {
  OptimizerState state;
  for (const Tensor* p : params) state.mean_square.push_back(Tensor::zeros(p->shape()));
  return state;
}

void rmsprop_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                  OptimizerState& state, const RmsPropConfig& config) {
  if (grads.size() != params.size() || state.mean_square.size() != params.size()) {
    throw DimensionError("rmsprop_step: parameter, gradient and state counts differ");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& param = *params[p];
    Tensor& s = state.mean_square[p];
    const Tensor& g = grads[p];
    if (g.shape() != param.shape() || s.shape() != param.shape()) {
      throw DimensionError("rmsprop_step: gradient " + to_string(g.shape()) + " for parameter " +
                           to_string(param.shape()));
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
      s[i] = config.decay * s[i] + (1.0 - config.decay) * g[i] * g[i];
      if (g[i] == 0.0) continue;
      param[i] -= config.learning_rate * g[i] / (std::sqrt(s[i]) + config.epsilon);
    }
  }
}

}  // namespace musanet
