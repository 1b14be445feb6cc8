#pragma once

#include <functional>
#include <span>
#include <vector>

#include "musanet/autograd.hpp"

namespace musanet {

// Builds a scalar loss on `tape` from parameters bound in the given order.
// Must be deterministic: it is re-evaluated for every perturbed entry.
using ScalarFunction = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t entries_checked = 0;
};

// Compares reverse-mode gradients with central differences
// (f(p + h) - f(p - h)) / 2h for every entry of every parameter. The relative
// error of an entry is |analytic - numeric| / max(|analytic|, |numeric|, floor).
// Throws NumericError if f is not finite at any evaluation point.
GradCheckReport finite_diff_check(const ScalarFunction& f, std::vector<Tensor> params,
                                  double h = 1e-5, double floor = 1e-6);

}  // namespace musanet
