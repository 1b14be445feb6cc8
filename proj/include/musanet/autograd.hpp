#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "musanet/tensor.hpp"

namespace musanet {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Ordered record of executed operations. Adjoints are replayed in reverse
// recording order by backward(). A tape is confined to one thread.
class Tape {
 public:
  // Accumulates the contribution of the node's output gradient into the
  // gradients of its inputs (obtained through grad_sink).
  using Adjoint =
      std::function<void(Tape&, const Tensor& out, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  // Records the result of an operation. If none of `inputs` requires a
  // gradient the adjoint is dropped and the result is a constant.
  Var record(Tensor value, std::span<const Var> inputs, Adjoint adjoint);
  Var record(Tensor value, std::initializer_list<Var> inputs, Adjoint adjoint) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(adjoint));
  }

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  // Gradient buffer of `v` for adjoints to accumulate into, allocated as
  // zeros on first use. Returns nullptr when `v` does not require a gradient.
  Tensor* grad_sink(Var v);

  // Reverse sweep from a single-element `loss`. Throws ContractError when the
  // loss is not scalar or belongs to another tape.
  void backward(Var loss);

  // Gradient of `v` after backward(); exactly zero if `v` did not
  // participate in the loss.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Adjoint adjoint;
  };

  void check_owned(Var v) const;

  std::vector<Node> nodes_;
};

// Large negative score offset standing in for -infinity in attention masks.
inline constexpr double kMaskSentinel = -1e9;
inline bool is_masked(double mask_value) { return mask_value <= 0.5 * kMaskSentinel; }

namespace ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// x[..., d] + bias[d]
Var add_bias(Var x, Var bias);

Var relu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var exp(Var x);
Var log(Var x);

// [m x k] * [k x n]
Var matmul(Var a, Var b);
// x[n x in] * w[out x in]^T + b[out]
Var linear(Var x, Var weight, Var bias);

// Reductions. The axis overloads drop the reduced axis (a rank-1 input
// reduces to shape [1]).
Var sum(Var x);
Var mean(Var x);
Var sum(Var x, std::size_t axis);
Var mean(Var x, std::size_t axis);

Var concat(std::span<const Var> parts, std::size_t axis);
Var reshape(Var x, Shape shape);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Var transpose_last(Var x);

// Embedding lookup: rows of table[N x d] selected by index. The adjoint
// scatter-adds into the selected rows.
Var gather_rows(Var table, std::span<const int> index);

// Inverted dropout. Identity when rate == 0.
Var dropout(Var x, double rate, std::mt19937_64& rng);

// Softmax over the last axis of scores + mask. Entries whose mask is the
// sentinel come out exactly 0; a fully masked row is all zeros.
Var masked_softmax(Var scores, const Tensor& mask);

// Per last-axis slice: gain * (x - mean) / sqrt(var + eps) + bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// out[j][i][k] = target[j][k] + source[i][k]; target [m x d], source [n x d].
Var pair_sum(Var target, Var source);

// Feature-wise weighted sum: out[j][k] = sum_i probs[j][k][i] * values[i][k]
// with probs [J x d x n] and values [n x d].
Var attend(Var probs, Var values);

// Mean softmax cross-entropy of logits [B x C] against class labels.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
// Mean binary cross-entropy over all entries of logits [B x C] vs targets in {0,1}.
Var sigmoid_cross_entropy(Var logits, const Tensor& targets);

}  // namespace ops
}  // namespace musanet
