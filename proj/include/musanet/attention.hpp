#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

#include "musanet/autograd.hpp"

namespace musanet {

// Multi-dimensional attention pooling head:
// f(v) = W tanh(W1 v + b1) + b, one score per feature.
template <typename T>
struct PoolingWeights {
  T w1, b1, w, b;

  template <typename F>
  auto map(F&& f) const {
    using U = decltype(f(w1));
    return PoolingWeights<U>{f(w1), f(b1), f(w), f(b)};
  }
  template <typename F>
  void for_each(F&& f) const {
    f("w1", w1), f("b1", b1), f("w", w), f("b", b);
  }
  template <typename F>
  void for_each(F&& f) {
    f("w1", w1), f("b1", b1), f("w", w), f("b", b);
  }
};

// Masked self-attention block: f(v_i, v_j) = W tanh(W1 v_i + W2 v_j + b1) + b,
// followed by u = LayerNorm(ReLU(v + s)).
template <typename T>
struct MsaWeights {
  T w1, w2, b1, w, b, ln_gain, ln_bias;

  template <typename F>
  auto map(F&& f) const {
    using U = decltype(f(w1));
    return MsaWeights<U>{f(w1), f(w2), f(b1), f(w), f(b), f(ln_gain), f(ln_bias)};
  }
  template <typename F>
  void for_each(F&& f) const {
    f("w1", w1), f("w2", w2), f("b1", b1), f("w", w), f("b", b), f("ln_gain", ln_gain),
        f("ln_bias", ln_bias);
  }
  template <typename F>
  void for_each(F&& f) {
    f("w1", w1), f("w2", w2), f("b1", b1), f("w", w), f("b", b), f("ln_gain", ln_gain),
        f("ln_bias", ln_bias);
  }
};

// Vanilla additive attention against a query: scalar score
// w . tanh(W1 v_i + W2 q + b1) + b per position.
template <typename T>
struct AdditiveWeights {
  T w1, w2, b1, w, b;

  template <typename F>
  auto map(F&& f) const {
    using U = decltype(f(w1));
    return AdditiveWeights<U>{f(w1), f(w2), f(b1), f(w), f(b)};
  }
};

using PoolingParams = PoolingWeights<Tensor>;
using PoolingVars = PoolingWeights<Var>;
using MsaParams = MsaWeights<Tensor>;
using MsaVars = MsaWeights<Var>;
using AdditiveParams = AdditiveWeights<Tensor>;
using AdditiveVars = AdditiveWeights<Var>;

// Registers every tensor of `params` on the tape as a trainable parameter,
// in declaration order.
template <typename W>
auto bind_parameters(Tape& tape, const W& params) {
  return params.map([&tape](const Tensor& t) { return tape.parameter(t); });
}
template <typename W>
auto bind_constants(Tape& tape, const W& params) {
  return params.map([&tape](const Tensor& t) { return tape.constant(t); });
}

// Weights ~ N(0, stddev^2), biases 0, layer-norm gain 1.
PoolingParams init_pooling(std::size_t d, std::mt19937_64& rng, double stddev = 0.02);
MsaParams init_msa(std::size_t d, std::mt19937_64& rng, double stddev = 0.02);
AdditiveParams init_additive(std::size_t d, std::mt19937_64& rng, double stddev = 0.02);

enum class MaskDirection { kForward, kBackward };

// matrix(i, j) is 0 where source i may inform target j and the sentinel
// otherwise: forward admits i < j, backward admits i > j.
struct PositionalMask {
  MaskDirection direction = MaskDirection::kForward;
  Tensor matrix;  // [m x m]
};

PositionalMask positional_mask(std::size_t m, MaskDirection direction);

// Score vector of one (source, target) pair.
Tensor compat_multidim(const Tensor& source, const Tensor& target, const MsaParams& params);

// All pairs at once: out[j][i] = f(v_i, v_j), shape [m x m x d].
Var pairwise_compat(Var visits, const MsaVars& params);

struct PoolOutput {
  Var pooled;         // [d]
  Var probabilities;  // [d x n]
};

// Feature-wise attention pooling over the rows of `rows` [n x d]. `valid[i]`
// marks real rows; an all-padding input pools to the zero vector.
PoolOutput attention_pool(Var rows, std::span<const std::uint8_t> valid, const PoolingVars& params);

struct MsaOutput {
  Var output;         // [m x d]
  Var probabilities;  // [m x d x m]: probabilities(j, k, i) = P^j_{ki}
};

// Masked self-attention over `visits` [m x d]. `position_mask` is [m x m]
// (source, target); padding rows are masked as sources.
MsaOutput msa_forward(Var visits, const Tensor& position_mask, std::span<const std::uint8_t> valid,
                      const MsaVars& params, double eps = 1e-5);
inline MsaOutput msa_forward(Var visits, const PositionalMask& mask,
                             std::span<const std::uint8_t> valid, const MsaVars& params,
                             double eps = 1e-5) {
  return msa_forward(visits, mask.matrix, valid, params, eps);
}

// Rows of the interval table [(L + 1) x d] at min(position, L).
Var interval_encode(std::span<const int> positions, Var table);

// Softmax-weighted average of the rows of `rows` [n x d] under scalar
// additive scores against `query` [d].
Var additive_attention(Var rows, Var query, const AdditiveVars& params);

}  // namespace musanet
