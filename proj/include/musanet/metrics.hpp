#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "musanet/tensor.hpp"

namespace musanet {

// Average precision: rank by descending score (ties keep input order) and
// sum (R_n - R_{n-1}) * P_n over the ranks. Needs at least one positive.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

// Indices of the k highest scores, ties broken by ascending index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

// Mean over rows of |top_k(row) ∩ labels| / min(k, |labels|).
// `scores` is [N x C]; every label set must be nonempty.
double precision_at_k(const Tensor& scores, const std::vector<std::vector<int>>& labels, std::size_t k);

// Expected precision_at_k of a uniformly random ranking over `num_classes`.
double random_precision_at_k(const std::vector<std::vector<int>>& labels, std::size_t num_classes,
                             std::size_t k);

}  // namespace musanet
