#pragma once

#include <span>
#include <vector>

#include "musanet/tensor.hpp"

namespace musanet {

struct RmsPropConfig {
  double learning_rate = 1e-3;
  double decay = 0.9;
  double epsilon = 1e-7;

  void validate() const;
};

// Running mean of squared gradients, one tensor per parameter.
struct OptimizerState {
  std::vector<Tensor> mean_square;
};

OptimizerState make_optimizer_state(std::span<Tensor* const> params);

// Plain (uncentred, momentum-free) RMSprop:
//   s <- decay * s + (1 - decay) * g^2
//   p <- p - lr * g / (sqrt(s) + epsilon)
void rmsprop_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                  OptimizerState& state, const RmsPropConfig& config);

}  // namespace musanet
