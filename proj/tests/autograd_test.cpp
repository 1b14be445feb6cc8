#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "musanet/autograd.hpp"
#include "musanet/errors.hpp"
#include "musanet/gradcheck.hpp"
#include "test_util.hpp"

using namespace musanet;
using testutil::random_tensor;

namespace {

// Projects an op's output onto fixed random weights so every output entry
// contributes a distinct gradient.
Var project(Tape& tape, Var out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return ops::sum(ops::mul(out, tape.constant(random_tensor(out.shape(), rng))));
}

double check(const std::function<Var(Tape&, std::span<const Var>)>& op, std::vector<Tensor> inputs) {
  const ScalarFunction f = [&](Tape& tape, std::span<const Var> v) { return project(tape, op(tape, v)); };
  return finite_diff_check(f, std::move(inputs)).max_relative_error;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrix) {
  Tape tape;
  Var eye = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  Var m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(ops::matmul(eye, m).value(), Tensor::matrix({{1, 2}, {3, 4}}));
}

TEST(Matmul, HandComputed) {
  Tape tape;
  Var a = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var b = tape.constant(Tensor::matrix({{5}, {6}}));
  EXPECT_EQ(ops::matmul(a, b).value(), Tensor::matrix({{17}, {39}}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  try {
    ops::matmul(a, a);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(MaskedSoftmax, SpecCases) {
  Tape tape;
  const double inf = kMaskSentinel;
  auto run = [&](Tensor s, Tensor m) { return ops::masked_softmax(tape.constant(s), m).value(); };
  EXPECT_EQ(run(Tensor::vector({0, 0}), Tensor::vector({0, 0})), Tensor::vector({0.5, 0.5}));
  EXPECT_EQ(run(Tensor::vector({3, 1}), Tensor::vector({0, inf})), Tensor::vector({1, 0}));
  EXPECT_EQ(run(Tensor::vector({5, 7}), Tensor::vector({inf, inf})), Tensor::vector({0, 0}));
}

TEST(MaskedSoftmax, RowsSumToOneOrZero) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution drop(0.4);
  Tape tape;
  Tensor scores = random_tensor({50, 7}, rng, 10.0);
  Tensor mask({50, 7});
  for (double& x : mask.data()) x = drop(rng) ? kMaskSentinel : 0.0;
  const Tensor p = ops::masked_softmax(tape.constant(scores), mask).value();
  for (std::size_t r = 0; r < 50; ++r) {
    double total = 0.0;
    bool any = false;
    for (std::size_t c = 0; c < 7; ++c) {
      if (is_masked(mask.at(r, c))) {
        EXPECT_EQ(p.at(r, c), 0.0);
      } else {
        any = true;
      }
      total += p.at(r, c);
    }
    if (any) {
      EXPECT_NEAR(total, 1.0, 1e-12);
    } else {
      EXPECT_EQ(total, 0.0);
    }
  }
}

TEST(LayerNorm, SpecCases) {
  Tape tape;
  auto run = [&](Tensor x, Tensor bias, double eps) {
    const std::size_t d = x.size();
    return ops::layer_norm(tape.constant(x), tape.constant(Tensor::full({d}, 1.0)), tape.constant(bias), eps)
        .value();
  };
  EXPECT_EQ(run(Tensor::vector({1, 1, 1}), Tensor({3}), 1e-5), Tensor::vector({0, 0, 0}));
  EXPECT_EQ(run(Tensor::vector({-1, 1}), Tensor({2}), 0.0), Tensor::vector({-1, 1}));
  EXPECT_EQ(run(Tensor::vector({0, 0}), Tensor::vector({5, 5}), 1e-5), Tensor::vector({5, 5}));
}

TEST(LayerNorm, StandardizesRows) {
  std::mt19937_64 rng(5);
  Tape tape;
  Tensor x = random_tensor({4, 16}, rng, 3.0);
  const Tensor y = ops::layer_norm(tape.constant(x), tape.constant(Tensor::full({16}, 1.0)),
                                   tape.constant(Tensor({16})), 0.0)
                       .value();
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t c = 0; c < 16; ++c) mean += y.at(r, c) / 16.0;
    for (std::size_t c = 0; c < 16; ++c) sq += (y.at(r, c) - mean) * (y.at(r, c) - mean) / 16.0;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq, 1.0, 1e-12);
  }
}

TEST(Backward, SumOfParameter) {
  Tape tape;
  Var w = tape.parameter(Tensor::vector({0.3, -1, 2}));
  Var loss = ops::sum(w);
  tape.backward(loss);
  EXPECT_EQ(tape.grad(w), Tensor::vector({1, 1, 1}));
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var w = tape.parameter(Tensor::vector({2, -3}));
  tape.backward(ops::sum(ops::mul(w, w)));
  EXPECT_EQ(tape.grad(w), Tensor::vector({4, -6}));
}

TEST(Backward, UnusedParameterHasZeroGradient) {
  Tape tape;
  Var w = tape.parameter(Tensor::vector({1, 2}));
  Var unused = tape.parameter(Tensor::vector({5, 6, 7}));
  tape.backward(ops::sum(w));
  EXPECT_EQ(tape.grad(unused), Tensor({3}));
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape tape;
  Var w = tape.parameter(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(w), ContractError);
}

TEST(Backward, SharedInputAccumulates) {
  Tape tape;
  Var w = tape.parameter(Tensor::vector({1.5}));
  // loss = w*w + 3w  =>  2w + 3
  tape.backward(ops::add(ops::mul(w, w), ops::scale(w, 3.0)));
  EXPECT_DOUBLE_EQ(tape.grad(w)[0], 6.0);
}

TEST(Backward, RepeatableOnSameTape) {
  Tape tape;
  Var w = tape.parameter(Tensor::vector({2, 3}));
  Var loss = ops::sum(ops::mul(w, w));
  tape.backward(loss);
  const Tensor first = tape.grad(w);
  tape.backward(loss);
  EXPECT_EQ(tape.grad(w), first);
}

TEST(FiniteDiff, Square) {
  const ScalarFunction f = [](Tape&, std::span<const Var> v) { return ops::sum(ops::mul(v[0], v[0])); };
  const GradCheckReport r = finite_diff_check(f, {Tensor::vector({3})});
  EXPECT_LT(r.max_relative_error, 1e-7);
  EXPECT_EQ(r.entries_checked, 1u);
}

TEST(FiniteDiff, ConstantFunction) {
  const ScalarFunction f = [](Tape& tape, std::span<const Var>) {
    return tape.constant(Tensor::scalar(4.0));
  };
  const GradCheckReport r = finite_diff_check(f, {Tensor::vector({1, 2})});
  EXPECT_EQ(r.max_relative_error, 0.0);
  EXPECT_EQ(r.max_absolute_error, 0.0);
}

TEST(FiniteDiff, NonFiniteLossIsAnError) {
  const ScalarFunction f = [](Tape&, std::span<const Var> v) { return ops::sum(ops::log(v[0])); };
  EXPECT_THROW(finite_diff_check(f, {Tensor::vector({-1})}), NumericError);
}

class OpGradient : public ::testing::Test {
 protected:
  std::mt19937_64 rng{11};
  Tensor r(Shape s, double scale = 1.0) { return random_tensor(std::move(s), rng, scale); }
  Tensor positive(Shape s) {
    Tensor t = r(std::move(s));
    for (double& x : t.data()) x = 0.5 + std::abs(x);
    return t;
  }
};

TEST_F(OpGradient, Elementwise) {
  EXPECT_LT(check([](Tape&, auto v) { return ops::add(v[0], v[1]); }, {r({3, 2}), r({3, 2})}), 1e-7);
  EXPECT_LT(check([](Tape&, auto v) { return ops::sub(v[0], v[1]); }, {r({3, 2}), r({3, 2})}), 1e-7);
  EXPECT_LT(check([](Tape&, auto v) { return ops::mul(v[0], v[1]); }, {r({3, 2}), r({3, 2})}), 1e-7);
  EXPECT_LT(check([](Tape&, auto v) { return ops::scale(v[0], -2.5); }, {r({4})}), 1e-7);
  EXPECT_LT(check([](Tape&, auto v) { return ops::add_bias(v[0], v[1]); }, {r({2, 3, 4}), r({4})}), 1e-7);
  EXPECT_LT(check([](Tape&, auto v) { return ops::tanh(v[0]); }, {r({5})}), 1e-6);
  EXPECT_LT(check([](Tape&, auto v) { return ops::sigmoid(v[0]); }, {r({5})}), 1e-6);
  EXPECT_LT(check([](Tape&, auto v) { return ops::exp(v[0]); }, {r({5})}), 1e-6);
  EXPECT_LT(check([](Tape&, auto v) { return ops::log(v[0]); }, {positive({5})}), 1e-6);
  // Keep ReLU inputs away from the kink.
  EXPECT_LT(check([](Tape&, auto v) { return ops::relu(v[0]); }, {Tensor::vector({-1.2, 0.7, 2.0, -0.3})}), 1e-7);
}

TEST_F(OpGradient, LinearAlgebra) {
  EXPECT_LT(check([](Tape&, auto v) { return ops::matmul(v[0], v[1]); }, {r({3, 4}), r({4, 2})}), 1e-7);
  EXPECT_LT(check([](Tape&, auto v) { return ops::linear(v[0], v[1], v[2]); }, {r({5, 3}), r({2, 3}), r({2})}),
            1e-7);
}

TEST_F(OpGradient, Reductions) {
  EXPECT_LT(check([](Tape&, auto v) { return ops::sum(v[0]); }, {r({2, 3})}), 1e-7);
  EXPECT_LT(check([](Tape&, auto v) { return ops::mean(v[0]); }, {r({2, 3})}), 1e-7);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    EXPECT_LT(check([axis](Tape&, auto v) { return ops::sum(v[0], axis); }, {r({2, 3, 4})}), 1e-7);
    EXPECT_LT(check([axis](Tape&, auto v) { return ops::mean(v[0], axis); }, {r({2, 3, 4})}), 1e-7);
  }
}

TEST_F(OpGradient, ShapeOps) {
  EXPECT_LT(check([](Tape&, auto v) { return ops::concat(v, 1); }, {r({2, 3}), r({2, 1})}), 1e-7);
  EXPECT_LT(check([](Tape&, auto v) { return ops::concat(v, 0); }, {r({2, 3}), r({1, 3})}), 1e-7);
  EXPECT_LT(check([](Tape&, auto v) { return ops::reshape(v[0], {3, 2}); }, {r({2, 3})}), 1e-7);
  EXPECT_LT(check([](Tape&, auto v) { return ops::transpose_last(v[0]); }, {r({2, 3})}), 1e-7);
  EXPECT_LT(check([](Tape&, auto v) { return ops::transpose_last(v[0]); }, {r({2, 3, 4})}), 1e-7);
}

TEST_F(OpGradient, AttentionPrimitives) {
  Tensor mask({3, 4});
  mask.at(0, 1) = kMaskSentinel;
  mask.at(2, 0) = mask.at(2, 1) = mask.at(2, 2) = mask.at(2, 3) = kMaskSentinel;
  EXPECT_LT(check([&](Tape&, auto v) { return ops::masked_softmax(v[0], mask); }, {r({3, 4})}), 1e-6);
  EXPECT_LT(check([](Tape&, auto v) { return ops::layer_norm(v[0], v[1], v[2]); }, {r({3, 5}), r({5}), r({5})}),
            1e-6);
  EXPECT_LT(check([](Tape&, auto v) { return ops::pair_sum(v[0], v[1]); }, {r({3, 2}), r({4, 2})}), 1e-7);
  EXPECT_LT(check([](Tape&, auto v) { return ops::attend(v[0], v[1]); }, {r({2, 3, 4}), r({4, 3})}), 1e-7);
}

TEST_F(OpGradient, Losses) {
  const std::vector<int> labels{1, 0, 1};
  const ScalarFunction ce = [&](Tape&, std::span<const Var> v) { return ops::softmax_cross_entropy(v[0], labels); };
  EXPECT_LT(finite_diff_check(ce, {r({3, 2})}).max_relative_error, 1e-6);
  const Tensor targets = Tensor::matrix({{1, 0, 0}, {0, 1, 1}});
  const ScalarFunction bce = [&](Tape&, std::span<const Var> v) { return ops::sigmoid_cross_entropy(v[0], targets); };
  EXPECT_LT(finite_diff_check(bce, {r({2, 3}, 3.0)}).max_relative_error, 1e-6);
}

TEST(GatherRows, ScatterAddAdjoint) {
  Tape tape;
  Var table = tape.parameter(Tensor::matrix({{0, 0}, {1, 2}, {3, 4}}));
  const std::vector<int> index{2, 1, 2};
  Var rows = ops::gather_rows(table, index);
  EXPECT_EQ(rows.value(), Tensor::matrix({{3, 4}, {1, 2}, {3, 4}}));
  Var upstream = tape.constant(Tensor::matrix({{1, 10}, {100, 1000}, {2, 20}}));
  tape.backward(ops::sum(ops::mul(rows, upstream)));
  EXPECT_EQ(tape.grad(table), Tensor::matrix({{0, 0}, {100, 1000}, {3, 30}}));
}

TEST(GatherRows, OutOfRangeIndex) {
  Tape tape;
  Var table = tape.constant(Tensor({3, 2}));
  const std::vector<int> index{3};
  EXPECT_THROW(ops::gather_rows(table, index), DimensionError);
}

TEST(Dropout, SeededAndScaled) {
  Tape tape;
  Var x = tape.constant(Tensor::full({1000}, 2.0));
  std::mt19937_64 a(4), b(4);
  const Tensor ya = ops::dropout(x, 0.25, a).value();
  EXPECT_EQ(ya, ops::dropout(x, 0.25, b).value());
  std::size_t kept = 0;
  for (double v : ya.data()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 2.0 / 0.75) < 1e-15);
    kept += v != 0.0;
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1000.0, 0.75, 0.05);
}

TEST(Dropout, ZeroRateIsIdentityAndBadRateRejected) {
  Tape tape;
  Var x = tape.constant(Tensor::vector({1, 2, 3}));
  std::mt19937_64 rng(1);
  EXPECT_EQ(ops::dropout(x, 0.0, rng).value(), x.value());
  EXPECT_THROW(ops::dropout(x, 1.0, rng), ContractError);
  EXPECT_THROW(ops::dropout(x, -0.1, rng), ContractError);
}

TEST(Determinism, SameComputationSameBits) {
  auto run = [] {
    std::mt19937_64 rng(8);
    Tape tape;
    Var a = tape.parameter(random_tensor({4, 6}, rng));
    Var b = tape.parameter(random_tensor({6, 3}, rng));
    Var loss = ops::mean(ops::tanh(ops::matmul(a, b)));
    tape.backward(loss);
    return std::make_pair(loss.value(), tape.grad(a));
  };
  EXPECT_EQ(run(), run());
}
