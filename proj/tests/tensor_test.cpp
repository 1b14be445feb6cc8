#include <gtest/gtest.h>

#include <cmath>

#include "musanet/errors.hpp"
#include "musanet/tensor.hpp"

using musanet::DimensionError;
using musanet::Tensor;

TEST(Tensor, ZerosHaveShapeAndSize) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.size(), 24u);
  for (double x : t.data()) EXPECT_EQ(x, 0.0);
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor(musanet::Shape{}), DimensionError);
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({1, 1, 1, 1, 1}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST(Tensor, RowMajorIndexing) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.at(1, 0), 4.0);
  EXPECT_EQ(m[5], 6.0);
  EXPECT_EQ(m.row(1), Tensor::vector({4, 5, 6}));

  Tensor c({2, 3, 4});
  c.at(1, 2, 3) = 7.0;
  EXPECT_EQ(c[1 * 12 + 2 * 4 + 3], 7.0);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  Tensor r = m.reshaped({3, 2});
  EXPECT_EQ(r.at(2, 1), 6.0);
  EXPECT_EQ(r.values(), m.values());
  EXPECT_THROW(m.reshaped({4, 2}), DimensionError);
}

TEST(Tensor, ItemNeedsSingleElement) {
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor::vector({1, 2}).item(), musanet::ContractError);
}

TEST(Tensor, FiniteCheckAndDiff) {
  Tensor a = Tensor::vector({1, 2, 3});
  Tensor b = Tensor::vector({1, 2.5, 3});
  EXPECT_TRUE(a.all_finite());
  EXPECT_DOUBLE_EQ(musanet::max_abs_diff(a, b), 0.5);
  b[0] = std::nan("");
  EXPECT_FALSE(b.all_finite());
  EXPECT_THROW(musanet::max_abs_diff(a, Tensor::vector({1, 2})), DimensionError);
}

TEST(Tensor, ShapeToString) { EXPECT_EQ(musanet::to_string({2, 3}), "[2x3]"); }
