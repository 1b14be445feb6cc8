#include "musanet/attention.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "musanet/errors.hpp"

namespace musanet {
namespace {

Tensor gaussian(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = normal(rng);
  return t;
}

}  // namespace

PoolingParams init_pooling(std::size_t d, std::mt19937_64& rng, double stddev) {
  PoolingParams p;
  p.w1 = gaussian({d, d}, rng, stddev);
  p.b1 = Tensor::zeros({d});
  p.w = gaussian({d, d}, rng, stddev);
  p.b = Tensor::zeros({d});
  return p;
}

MsaParams init_msa(std::size_t d, std::mt19937_64& rng, double stddev) {
  MsaParams p;
  p.w1 = gaussian({d, d}, rng, stddev);
  p.w2 = gaussian({d, d}, rng, stddev);
  p.b1 = Tensor::zeros({d});
  p.w = gaussian({d, d}, rng, stddev);
  p.b = Tensor::zeros({d});
  p.ln_gain = Tensor::full({d}, 1.0);
  p.ln_bias = Tensor::zeros({d});
  return p;
}

AdditiveParams init_additive(std::size_t d, std::mt19937_64& rng, double stddev) {
  AdditiveParams p;
  p.w1 = gaussian({d, d}, rng, stddev);
  p.w2 = gaussian({d, d}, rng, stddev);
  p.b1 = Tensor::zeros({d});
  p.w = gaussian({1, d}, rng, stddev);
  p.b = Tensor::zeros({1});
  return p;
}

PositionalMask positional_mask(std::size_t m, MaskDirection direction) {
  if (m == 0) throw ContractError("positional_mask: m must be positive");
  PositionalMask mask{direction, Tensor::full({m, m}, kMaskSentinel)};
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const bool open = direction == MaskDirection::kForward ? i < j : i > j;
      if (open) mask.matrix.at(i, j) = 0.0;
    }
  }
  return mask;
}

Tensor compat_multidim(const Tensor& source, const Tensor& target, const MsaParams& params) {
  const std::size_t d = source.size();
  if (target.size() != d || params.w1.shape() != Shape{d, d}) {
    throw DimensionError("compat_multidim: inconsistent feature dimension");
  }
  std::vector<double> hidden(d);
  for (std::size_t r = 0; r < d; ++r) {
    double acc = params.b1[r];
    for (std::size_t c = 0; c < d; ++c) {
      acc += params.w1.at(r, c) * source[c] + params.w2.at(r, c) * target[c];
    }
    hidden[r] = std::tanh(acc);
  }
  Tensor out({d});
  for (std::size_t r = 0; r < d; ++r) {
    double acc = params.b[r];
    for (std::size_t c = 0; c < d; ++c) acc += params.w.at(r, c) * hidden[c];
    out[r] = acc;
  }
  return out;
}

Var pairwise_compat(Var visits, const MsaVars& params) {
  if (visits.shape().size() != 2) {
    throw DimensionError("pairwise_compat: visits must be [m x d], got " + to_string(visits.shape()));
  }
  const std::size_t m = visits.shape()[0], d = visits.shape()[1];
  Tape& tape = *visits.tape();
  Var zero_bias = tape.constant(Tensor::zeros({d}));
  Var from_source = ops::linear(visits, params.w1, zero_bias);
  Var from_target = ops::linear(visits, params.w2, params.b1);
  Var hidden = ops::tanh(ops::pair_sum(from_target, from_source));
  Var scores = ops::linear(ops::reshape(hidden, {m * m, d}), params.w, params.b);
  return ops::reshape(scores, {m, m, d});
}

PoolOutput attention_pool(Var rows, std::span<const std::uint8_t> valid, const PoolingVars& params) {
  if (rows.shape().size() != 2) {
    throw DimensionError("attention_pool: rows must be [n x d], got " + to_string(rows.shape()));
  }
  const std::size_t n = rows.shape()[0], d = rows.shape()[1];
  if (valid.size() != n) {
    throw DimensionError("attention_pool: mask of length " + std::to_string(valid.size()) +
                         " for " + std::to_string(n) + " rows");
  }
  Var hidden = ops::tanh(ops::linear(rows, params.w1, params.b1));
  Var scores = ops::transpose_last(ops::linear(hidden, params.w, params.b));  // [d x n]
  Tensor mask({d, n});
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t i = 0; i < n; ++i) mask.at(k, i) = valid[i] ? 0.0 : kMaskSentinel;
  }
  Var probs = ops::masked_softmax(scores, mask);
  Var pooled = ops::attend(ops::reshape(probs, {1, d, n}), rows);
  return {ops::reshape(pooled, {d}), probs};
}

MsaOutput msa_forward(Var visits, const Tensor& position_mask, std::span<const std::uint8_t> valid,
                      const MsaVars& params, double eps) {
  if (visits.shape().size() != 2) {
    throw DimensionError("msa_forward: visits must be [m x d], got " + to_string(visits.shape()));
  }
  const std::size_t m = visits.shape()[0], d = visits.shape()[1];
  if (position_mask.shape() != Shape{m, m} || valid.size() != m) {
    throw DimensionError("msa_forward: mask " + to_string(position_mask.shape()) + " / padding " +
                         std::to_string(valid.size()) + " do not fit " + to_string(visits.shape()));
  }
  Var scores = ops::transpose_last(pairwise_compat(visits, params));  // [j x k x i]
  Tensor mask({m, d, m});
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      const double offset = position_mask.at(i, j) + (valid[i] ? 0.0 : kMaskSentinel);
      for (std::size_t k = 0; k < d; ++k) mask.at(j, k, i) = offset;
    }
  }
  Var probs = ops::masked_softmax(scores, mask);
  Var context = ops::attend(probs, visits);
  Var fused = ops::relu(ops::add(visits, context));
  return {ops::layer_norm(fused, params.ln_gain, params.ln_bias, eps), probs};
}

Var interval_encode(std::span<const int> positions, Var table) {
  if (table.shape().size() != 2) {
    throw DimensionError("interval_encode: table must be [(L+1) x d], got " + to_string(table.shape()));
  }
  const int limit = static_cast<int>(table.shape()[0]) - 1;
  std::vector<int> rows;
  rows.reserve(positions.size());
  for (int p : positions) {
    if (p < 0) throw ContractError("interval_encode: negative position " + std::to_string(p));
    rows.push_back(std::min(p, limit));
  }
  return ops::gather_rows(table, rows);
}

Var additive_attention(Var rows, Var query, const AdditiveVars& params) {
  if (rows.shape().size() != 2 || query.shape().size() != 1 || query.shape()[0] != rows.shape()[1]) {
    throw DimensionError("additive_attention: rows " + to_string(rows.shape()) + " vs query " +
                         to_string(query.shape()));
  }
  const std::size_t n = rows.shape()[0], d = rows.shape()[1];
  Tape& tape = *rows.tape();
  Var zero_bias = tape.constant(Tensor::zeros({d}));
  Var query_term = ops::linear(ops::reshape(query, {1, d}), params.w2, params.b1);  // [1 x d]
  Var from_rows = ops::linear(rows, params.w1, zero_bias);                          // [n x d]
  Var hidden = ops::tanh(ops::add(from_rows, ops::matmul(tape.constant(Tensor::full({n, 1}, 1.0)),
                                                         query_term)));
  Var scores = ops::transpose_last(ops::linear(hidden, params.w, params.b));  // [1 x n]
  Var probs = ops::masked_softmax(scores, Tensor::zeros({1, n}));
  // Same weight for every feature: the vanilla weighted average.
  Var expanded = ops::matmul(tape.constant(Tensor::full({d, 1}, 1.0)), probs);  // [d x n]
  return ops::reshape(ops::attend(ops::reshape(expanded, {1, d, n}), rows), {d});
}

}  // namespace musanet
