#include "musanet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "musanet/errors.hpp"

namespace musanet {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw ContractError("use of an unbound Var");
  return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Adjoint adjoint) {
  bool needs_grad = false;
  for (const Var& in : inputs) {
    check_owned(in);
    needs_grad = needs_grad || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor(), needs_grad,
                        needs_grad ? std::move(adjoint) : nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ContractError("Var does not belong to this tape");
  }
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id()].requires_grad;
}

Tensor* Tape::grad_sink(Var v) {
  check_owned(v);
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty()) node.grad = Tensor::zeros(node.value.shape());
  return &node.grad;
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (value(loss).size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        to_string(value(loss).shape()));
  }
  for (Node& node : nodes_) node.grad = Tensor();
  Tensor* seed = grad_sink(loss);
  if (seed == nullptr) return;
  (*seed)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.adjoint || node.grad.empty()) continue;
    node.adjoint(*this, node.value, node.grad);
  }
}

Tensor Tape::grad(Var v) const {
  check_owned(v);
  const Node& node = nodes_[v.id()];
  if (node.grad.empty()) return Tensor::zeros(node.value.shape());
  return node.grad;
}

namespace ops {
namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
}

void require_rank(const char* op, Var x, std::size_t rank) {
  if (x.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(x.shape()));
  }
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return *a.tape();
}

template <typename F>
Var unary(Var x, F&& fn, Tape::Adjoint adjoint) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fn(in[i]);
  return tape_of(x).record(std::move(out), {x}, std::move(adjoint));
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape_of(a).record(std::move(out), {a, b},
                           [a, b](Tape& t, const Tensor&, const Tensor& g) {
                             if (Tensor* ga = t.grad_sink(a)) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                             }
                             if (Tensor* gb = t.grad_sink(b)) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
                             }
                           });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape_of(a).record(std::move(out), {a, b},
                           [a, b](Tape& t, const Tensor&, const Tensor& g) {
                             if (Tensor* ga = t.grad_sink(a)) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                             }
                             if (Tensor* gb = t.grad_sink(b)) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                             }
                           });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape_of(a).record(std::move(out), {a, b},
                           [a, b](Tape& t, const Tensor&, const Tensor& g) {
                             const Tensor& av = t.value(a);
                             const Tensor& bv = t.value(b);
                             if (Tensor* ga = t.grad_sink(a)) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
                             }
                             if (Tensor* gb = t.grad_sink(b)) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
                             }
                           });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; },
               [a, factor](Tape& t, const Tensor&, const Tensor& g) {
                 Tensor* ga = t.grad_sink(a);
                 for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += factor * g[i];
               });
}

Var add_bias(Var x, Var bias) {
  require_rank("add_bias", bias, 1);
  const std::size_t d = bias.shape()[0];
  if (x.shape().back() != d) {
    throw DimensionError("add_bias: last axis of " + to_string(x.shape()) +
                         " does not match bias " + to_string(bias.shape()));
  }
  Tensor out = x.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % d];
  return tape_of(x).record(std::move(out), {x, bias},
                           [x, bias, d](Tape& t, const Tensor&, const Tensor& g) {
                             if (Tensor* gx = t.grad_sink(x)) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                             }
                             if (Tensor* gb = t.grad_sink(bias)) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % d] += g[i];
                             }
                           });
}

Var relu(Var x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [x](Tape& t, const Tensor&, const Tensor& g) {
                 const Tensor& in = t.value(x);
                 Tensor* gx = t.grad_sink(x);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   if (in[i] > 0.0) (*gx)[i] += g[i];
                 }
               });
}

Var tanh(Var x) {
  return unary(x, [](double v) { return std::tanh(v); },
               [x](Tape& t, const Tensor& out, const Tensor& g) {
                 Tensor* gx = t.grad_sink(x);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   (*gx)[i] += g[i] * (1.0 - out[i] * out[i]);
                 }
               });
}

Var sigmoid(Var x) {
  return unary(x,
               [](double v) {
                 return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                 : std::exp(v) / (1.0 + std::exp(v));
               },
               [x](Tape& t, const Tensor& out, const Tensor& g) {
                 Tensor* gx = t.grad_sink(x);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   (*gx)[i] += g[i] * out[i] * (1.0 - out[i]);
                 }
               });
}

Var exp(Var x) {
  return unary(x, [](double v) { return std::exp(v); },
               [x](Tape& t, const Tensor& out, const Tensor& g) {
                 Tensor* gx = t.grad_sink(x);
                 for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * out[i];
               });
}

Var log(Var x) {
  return unary(x, [](double v) { return std::log(v); },
               [x](Tape& t, const Tensor&, const Tensor& g) {
                 const Tensor& in = t.value(x);
                 Tensor* gx = t.grad_sink(x);
                 for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] / in[i];
               });
}

Var matmul(Var a, Var b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents disagree for " + to_string(a.shape()) +
                         " x " + to_string(b.shape()));
  }
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double aik = av[i * k + t];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aik * bv[t * n + j];
    }
  }
  return tape_of(a).record(
      std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        if (Tensor* ga = t.grad_sink(a)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t s = 0; s < k; ++s) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[s * n + j];
              (*ga)[i * k + s] += acc;
            }
          }
        }
        if (Tensor* gb = t.grad_sink(b)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t s = 0; s < k; ++s) {
              const double ais = av[i * k + s];
              for (std::size_t j = 0; j < n; ++j) (*gb)[s * n + j] += ais * g[i * n + j];
            }
          }
        }
      });
}

Var linear(Var x, Var weight, Var bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  require_rank("linear", bias, 1);
  const std::size_t rows = x.shape()[0], in = x.shape()[1], outd = weight.shape()[0];
  if (weight.shape()[1] != in || bias.shape()[0] != outd) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()) + " and bias " + to_string(bias.shape()));
  }
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  Tensor out({rows, outd});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * in];
    for (std::size_t o = 0; o < outd; ++o) {
      const double* wo = &wv[o * in];
      double acc = bv[o];
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
      out[r * outd + o] = acc;
    }
  }
  return tape_of(x).record(
      std::move(out), {x, weight, bias},
      [x, weight, bias, rows, in, outd](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& xv = t.value(x);
        const Tensor& wv = t.value(weight);
        if (Tensor* gx = t.grad_sink(x)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < outd; ++o) {
              const double gro = g[r * outd + o];
              if (gro == 0.0) continue;
              for (std::size_t i = 0; i < in; ++i) (*gx)[r * in + i] += gro * wv[o * in + i];
            }
          }
        }
        if (Tensor* gw = t.grad_sink(weight)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < outd; ++o) {
              const double gro = g[r * outd + o];
              if (gro == 0.0) continue;
              for (std::size_t i = 0; i < in; ++i) (*gw)[o * in + i] += gro * xv[r * in + i];
            }
          }
        }
        if (Tensor* gb = t.grad_sink(bias)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < outd; ++o) (*gb)[o] += g[r * outd + o];
          }
        }
      });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return tape_of(x).record(Tensor::scalar(total), {x},
                           [x](Tape& t, const Tensor&, const Tensor& g) {
                             Tensor* gx = t.grad_sink(x);
                             for (double& v : gx->data()) v += g[0];
                           });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var sum(Var x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("sum: axis " + std::to_string(axis) + " out of range for " +
                         to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out_shape.push_back(shape[i]);
  }
  if (out_shape.empty()) out_shape = {1};
  const Tensor& xv = x.value();
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * n + a) * inner + i];
    }
  }
  return tape_of(x).record(std::move(out), {x},
                           [x, outer, n, inner](Tape& t, const Tensor&, const Tensor& g) {
                             Tensor* gx = t.grad_sink(x);
                             for (std::size_t o = 0; o < outer; ++o) {
                               for (std::size_t a = 0; a < n; ++a) {
                                 for (std::size_t i = 0; i < inner; ++i) {
                                   (*gx)[(o * n + a) * inner + i] += g[o * inner + i];
                                 }
                               }
                             }
                           });
}

Var mean(Var x, std::size_t axis) {
  if (axis >= x.shape().size()) {
    throw DimensionError("mean: axis " + std::to_string(axis) + " out of range for " +
                         to_string(x.shape()));
  }
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.shape()[axis]));
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         to_string(first));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> chunk(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    bool compatible = s.size() == first.size();
    for (std::size_t i = 0; compatible && i < s.size(); ++i) {
      compatible = i == axis || s[i] == first[i];
    }
    if (!compatible) {
      throw DimensionError("concat: " + to_string(s) + " incompatible with " + to_string(first) +
                           " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
    chunk[p] = parts[p].value().size() / outer;
  }
  Tensor out(out_shape);
  std::size_t pos = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const Tensor& v = parts[p].value();
      std::copy_n(v.data().begin() + o * chunk[p], chunk[p], out.data().begin() + pos);
      pos += chunk[p];
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape_of(parts[0]).record(
      std::move(out), inputs, [inputs, chunk, outer](Tape& t, const Tensor&, const Tensor& g) {
        std::size_t pos = 0;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t p = 0; p < inputs.size(); ++p) {
            if (Tensor* gp = t.grad_sink(inputs[p])) {
              for (std::size_t i = 0; i < chunk[p]; ++i) (*gp)[o * chunk[p] + i] += g[pos + i];
            }
            pos += chunk[p];
          }
        }
      });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return tape_of(x).record(std::move(out), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Var transpose_last(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 2 && s.size() != 3) {
    throw DimensionError("transpose_last: expected rank 2 or 3, got " + to_string(s));
  }
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t rows = s[s.size() - 2], cols = s[s.size() - 1];
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  const Tensor& xv = x.value();
  Tensor out(out_shape);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[base + c * rows + r] = xv[base + r * cols + c];
    }
  }
  return tape_of(x).record(std::move(out), {x},
                           [x, batch, rows, cols](Tape& t, const Tensor&, const Tensor& g) {
                             Tensor* gx = t.grad_sink(x);
                             for (std::size_t b = 0; b < batch; ++b) {
                               const std::size_t base = b * rows * cols;
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   (*gx)[base + r * cols + c] += g[base + c * rows + r];
                                 }
                               }
                             }
                           });
}

Var gather_rows(Var table, std::span<const int> index) {
  require_rank("gather_rows", table, 2);
  if (index.empty()) throw ContractError("gather_rows: empty index");
  const std::size_t n = table.shape()[0], d = table.shape()[1];
  const Tensor& tv = table.value();
  Tensor out({index.size(), d});
  for (std::size_t r = 0; r < index.size(); ++r) {
    const int row = index[r];
    if (row < 0 || static_cast<std::size_t>(row) >= n) {
      throw DimensionError("gather_rows: index " + std::to_string(row) +
                           " out of range for table " + to_string(table.shape()));
    }
    std::copy_n(tv.data().begin() + row * d, d, out.data().begin() + r * d);
  }
  std::vector<int> rows(index.begin(), index.end());
  return tape_of(table).record(std::move(out), {table},
                               [table, rows, d](Tape& t, const Tensor&, const Tensor& g) {
                                 Tensor* gt = t.grad_sink(table);
                                 for (std::size_t r = 0; r < rows.size(); ++r) {
                                   const std::size_t base = static_cast<std::size_t>(rows[r]) * d;
                                   for (std::size_t k = 0; k < d; ++k) {
                                     (*gt)[base + k] += g[r * d + k];
                                   }
                                 }
                               });
}

Var dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ContractError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Tensor mask(x.shape());
  for (double& m : mask.data()) m = uniform(rng) < rate ? 0.0 : keep_scale;
  const Tensor& xv = x.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return tape_of(x).record(std::move(out), {x},
                           [x, mask](Tape& t, const Tensor&, const Tensor& g) {
                             Tensor* gx = t.grad_sink(x);
                             for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
                           });
}

Var masked_softmax(Var scores, const Tensor& mask) {
  if (scores.shape() != mask.shape()) {
    throw DimensionError("masked_softmax: scores " + to_string(scores.shape()) +
                         " vs mask " + to_string(mask.shape()));
  }
  const std::size_t n = scores.shape().back();
  const std::size_t rows = scores.value().size() / n;
  const Tensor& sv = scores.value();
  Tensor out(scores.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (!is_masked(mask[base + i])) max_score = std::max(max_score, sv[base + i] + mask[base + i]);
    }
    if (max_score == -std::numeric_limits<double>::infinity()) continue;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (is_masked(mask[base + i])) continue;
      const double e = std::exp(sv[base + i] + mask[base + i] - max_score);
      out[base + i] = e;
      total += e;
    }
    for (std::size_t i = 0; i < n; ++i) out[base + i] /= total;
  }
  return tape_of(scores).record(std::move(out), {scores},
                                [scores, rows, n](Tape& t, const Tensor& p, const Tensor& g) {
                                  Tensor* gs = t.grad_sink(scores);
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const std::size_t base = r * n;
                                    double dot = 0.0;
                                    for (std::size_t i = 0; i < n; ++i) dot += p[base + i] * g[base + i];
                                    for (std::size_t i = 0; i < n; ++i) {
                                      (*gs)[base + i] += p[base + i] * (g[base + i] - dot);
                                    }
                                  }
                                });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_rank("layer_norm", gain, 1);
  require_rank("layer_norm", bias, 1);
  const std::size_t d = x.shape().back();
  if (gain.shape()[0] != d || bias.shape()[0] != d) {
    throw DimensionError("layer_norm: input " + to_string(x.shape()) + " vs gain " +
                         to_string(gain.shape()) + " / bias " + to_string(bias.shape()));
  }
  const std::size_t rows = x.value().size() / d;
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor normalized(x.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * d];
    double mu = 0.0;
    for (std::size_t k = 0; k < d; ++k) mu += xr[k];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t k = 0; k < d; ++k) var += (xr[k] - mu) * (xr[k] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < d; ++k) normalized[r * d + k] = (xr[k] - mu) * inv_std[r];
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gv[i % d] * normalized[i] + bv[i % d];
  return tape_of(x).record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, d, rows, normalized, inv_std](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& gv = t.value(gain);
        if (Tensor* gg = t.grad_sink(gain)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % d] += g[i] * normalized[i];
        }
        if (Tensor* gb = t.grad_sink(bias)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % d] += g[i];
        }
        if (Tensor* gx = t.grad_sink(x)) {
          std::vector<double> dxhat(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
              dxhat[k] = g[r * d + k] * gv[k];
              mean_dxhat += dxhat[k];
              mean_dxhat_xhat += dxhat[k] * normalized[r * d + k];
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            for (std::size_t k = 0; k < d; ++k) {
              (*gx)[r * d + k] += inv_std[r] * (dxhat[k] - mean_dxhat -
                                                normalized[r * d + k] * mean_dxhat_xhat);
            }
          }
        }
      });
}

Var pair_sum(Var target, Var source) {
  require_rank("pair_sum", target, 2);
  require_rank("pair_sum", source, 2);
  const std::size_t m = target.shape()[0], n = source.shape()[0], d = target.shape()[1];
  if (source.shape()[1] != d) {
    throw DimensionError("pair_sum: feature extents disagree for " + to_string(target.shape()) +
                         " and " + to_string(source.shape()));
  }
  const Tensor& tv = target.value();
  const Tensor& sv = source.value();
  Tensor out({m, n, d});
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) out[(j * n + i) * d + k] = tv[j * d + k] + sv[i * d + k];
    }
  }
  return tape_of(target).record(
      std::move(out), {target, source},
      [target, source, m, n, d](Tape& t, const Tensor&, const Tensor& g) {
        Tensor* gt = t.grad_sink(target);
        Tensor* gs = t.grad_sink(source);
        for (std::size_t j = 0; j < m; ++j) {
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < d; ++k) {
              const double gv = g[(j * n + i) * d + k];
              if (gt) (*gt)[j * d + k] += gv;
              if (gs) (*gs)[i * d + k] += gv;
            }
          }
        }
      });
}

Var attend(Var probs, Var values) {
  require_rank("attend", probs, 3);
  require_rank("attend", values, 2);
  const std::size_t rows = probs.shape()[0], d = probs.shape()[1], n = probs.shape()[2];
  if (values.shape()[0] != n || values.shape()[1] != d) {
    throw DimensionError("attend: probabilities " + to_string(probs.shape()) +
                         " incompatible with values " + to_string(values.shape()));
  }
  const Tensor& pv = probs.value();
  const Tensor& vv = values.value();
  Tensor out({rows, d});
  for (std::size_t j = 0; j < rows; ++j) {
    for (std::size_t k = 0; k < d; ++k) {
      const double* p = &pv[(j * d + k) * n];
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += p[i] * vv[i * d + k];
      out[j * d + k] = acc;
    }
  }
  return tape_of(probs).record(
      std::move(out), {probs, values},
      [probs, values, rows, d, n](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& pv = t.value(probs);
        const Tensor& vv = t.value(values);
        Tensor* gp = t.grad_sink(probs);
        Tensor* gv = t.grad_sink(values);
        for (std::size_t j = 0; j < rows; ++j) {
          for (std::size_t k = 0; k < d; ++k) {
            const double gjk = g[j * d + k];
            const std::size_t base = (j * d + k) * n;
            for (std::size_t i = 0; i < n; ++i) {
              if (gp) (*gp)[base + i] += gjk * vv[i * d + k];
              if (gv) (*gv)[i * d + k] += gjk * pv[base + i];
            }
          }
        }
      });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  require_rank("softmax_cross_entropy", logits, 2);
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + to_string(logits.shape()));
  }
  const Tensor& lv = logits.value();
  Tensor probs({batch, classes});
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ContractError("softmax_cross_entropy: label " + std::to_string(label) +
                          " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = &lv[b * classes];
    const double top = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - top);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - top) / z;
    total += top + std::log(z) - row[label];
  }
  std::vector<int> targets(labels.begin(), labels.end());
  return tape_of(logits).record(
      Tensor::scalar(total / static_cast<double>(batch)), {logits},
      [logits, probs, targets, batch, classes](Tape& t, const Tensor&, const Tensor& g) {
        Tensor* gl = t.grad_sink(logits);
        const double factor = g[0] / static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < classes; ++c) {
            const double onehot = static_cast<int>(c) == targets[b] ? 1.0 : 0.0;
            (*gl)[b * classes + c] += factor * (probs[b * classes + c] - onehot);
          }
        }
      });
}

Var sigmoid_cross_entropy(Var logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw DimensionError("sigmoid_cross_entropy: logits " + to_string(logits.shape()) +
                         " vs targets " + to_string(targets.shape()));
  }
  const Tensor& lv = logits.value();
  const std::size_t count = lv.size();
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double x = lv[i];
    total += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  return tape_of(logits).record(
      Tensor::scalar(total / static_cast<double>(count)), {logits},
      [logits, targets, count](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& lv = t.value(logits);
        Tensor* gl = t.grad_sink(logits);
        const double factor = g[0] / static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i) {
          const double x = lv[i];
          const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
          (*gl)[i] += factor * (s - targets[i]);
        }
      });
}

}  // namespace ops
}  // namespace musanet
