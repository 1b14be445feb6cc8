#include "musanet/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "musanet/errors.hpp"

namespace musanet {

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("pr_auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) throw ContractError("pr_auc: no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] != 1) continue;
    ++hits;
    ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  return ap / static_cast<double>(positives);
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                    });
  order.resize(k);
  return order;
}

double precision_at_k(const Tensor& scores, const std::vector<std::vector<int>>& labels, std::size_t k) {
  if (scores.rank() != 2 || scores.dim(0) != labels.size()) {
    throw DimensionError("precision_at_k: scores " + to_string(scores.shape()) + " for " +
                         std::to_string(labels.size()) + " label sets");
  }
  if (k == 0) throw ContractError("precision_at_k: k must be positive");
  const std::size_t classes = scores.dim(1);
  double total = 0.0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n].empty()) throw ContractError("precision_at_k: empty label set");
    const auto top = top_k(scores.data().subspan(n * classes, classes), k);
    std::size_t hits = 0;
    for (std::size_t c : top) {
      if (std::find(labels[n].begin(), labels[n].end(), static_cast<int>(c)) != labels[n].end()) ++hits;
    }
    total += static_cast<double>(hits) / static_cast<double>(std::min(k, labels[n].size()));
  }
  return total / static_cast<double>(labels.size());
}

double random_precision_at_k(const std::vector<std::vector<int>>& labels, std::size_t num_classes,
                             std::size_t k) {
  if (labels.empty() || num_classes == 0 || k == 0) {
    throw ContractError("random_precision_at_k: empty input");
  }
  const double shown = static_cast<double>(std::min(k, num_classes));
  double total = 0.0;
  for (const auto& y : labels) {
    if (y.empty()) throw ContractError("random_precision_at_k: empty label set");
    const double expected_hits = shown * static_cast<double>(y.size()) / static_cast<double>(num_classes);
    total += expected_hits / static_cast<double>(std::min(k, y.size()));
  }
  return total / static_cast<double>(labels.size());
}

}  // namespace musanet
