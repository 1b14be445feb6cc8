#include "musanet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "musanet/errors.hpp"

namespace musanet {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw DimensionError("tensor rank must be 1..4, got shape " + to_string(shape));
  }
  for (std::size_t extent : shape) {
    if (extent == 0) {
      throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != numel(shape_)) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + to_string(shape_));
  }
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(n * m);
  for (const auto& row : rows) {
    if (row.size() != m) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({n, m}, std::move(data));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ContractError("item() on non-scalar tensor of shape " + to_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), std::move(data_));
}

Tensor Tensor::row(std::size_t i) const {
  if (rank() != 2) throw DimensionError("row() needs a rank-2 tensor, got " + to_string(shape_));
  const std::size_t cols = shape_[1];
  return Tensor({cols}, std::vector<double>(data_.begin() + i * cols,
                                            data_.begin() + (i + 1) * cols));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace musanet
