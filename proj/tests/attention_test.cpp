#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "musanet/attention.hpp"
#include "musanet/errors.hpp"
#include "musanet/gradcheck.hpp"
#include "test_util.hpp"

using namespace musanet;
using testutil::random_tensor;
using testutil::to_matrix;

namespace {

std::set<std::pair<int, int>> open_pairs(const PositionalMask& mask) {
  std::set<std::pair<int, int>> out;
  const std::size_t m = mask.matrix.dim(0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!is_masked(mask.matrix.at(i, j))) out.insert({static_cast<int>(i) + 1, static_cast<int>(j) + 1});
    }
  }
  return out;
}

MsaParams scaled_msa(std::size_t d, std::mt19937_64& rng) {
  MsaParams p = init_msa(d, rng, 0.5);
  p.b1 = random_tensor({d}, rng, 0.3);
  p.b = random_tensor({d}, rng, 0.3);
  p.ln_gain = random_tensor({d}, rng, 0.5);
  p.ln_bias = random_tensor({d}, rng, 0.5);
  return p;
}

PoolingParams scaled_pool(std::size_t d, std::mt19937_64& rng) {
  PoolingParams p = init_pooling(d, rng, 0.5);
  p.b1 = random_tensor({d}, rng, 0.3);
  p.b = random_tensor({d}, rng, 0.3);
  return p;
}

}  // namespace

TEST(PositionalMask, ThreeVisitPairs) {
  const std::set<std::pair<int, int>> forward{{1, 2}, {1, 3}, {2, 3}};
  const std::set<std::pair<int, int>> backward{{2, 1}, {3, 1}, {3, 2}};
  EXPECT_EQ(open_pairs(positional_mask(3, MaskDirection::kForward)), forward);
  EXPECT_EQ(open_pairs(positional_mask(3, MaskDirection::kBackward)), backward);
}

TEST(PositionalMask, ExcludesSelfAndMirrors) {
  for (std::size_t m : {1u, 2u, 5u, 9u}) {
    const PositionalMask f = positional_mask(m, MaskDirection::kForward);
    const PositionalMask b = positional_mask(m, MaskDirection::kBackward);
    for (std::size_t i = 0; i < m; ++i) {
      EXPECT_TRUE(is_masked(f.matrix.at(i, i)));
      EXPECT_TRUE(is_masked(b.matrix.at(i, i)));
      for (std::size_t j = 0; j < m; ++j) EXPECT_EQ(f.matrix.at(i, j), b.matrix.at(j, i));
    }
  }
  EXPECT_THROW(positional_mask(0, MaskDirection::kForward), ContractError);
}

TEST(AttentionPool, MatchesOracle) {
  std::mt19937_64 rng(4);
  const std::size_t d = 5;
  const std::size_t n = 6;
  const PoolingParams p = scaled_pool(d, rng);
  const Tensor rows = random_tensor({n, d}, rng);
  const std::vector<std::uint8_t> valid{1, 1, 0, 1, 1, 0};

  Tape tape;
  const PoolOutput out = attention_pool(tape.constant(rows), valid, bind_constants(tape, p));
  const oracle::PoolResult ref = oracle::pool(to_matrix(rows), valid, testutil::to_oracle(p));
  for (std::size_t k = 0; k < d; ++k) {
    EXPECT_NEAR(out.pooled.value()[k], ref.pooled[k], 1e-12);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(out.probabilities.value().at(k, i), ref.probs[k][i], 1e-12);
      total += out.probabilities.value().at(k, i);
      if (!valid[i]) EXPECT_EQ(out.probabilities.value().at(k, i), 0.0);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(AttentionPool, PermutationInvariant) {
  std::mt19937_64 rng(5);
  const std::size_t d = 4;
  const PoolingParams p = scaled_pool(d, rng);
  const Tensor rows = random_tensor({5, d}, rng);
  Tensor shuffled({5, d});
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < d; ++k) shuffled.at(i, k) = rows.at(perm[i], k);
  }
  const std::vector<std::uint8_t> valid(5, 1);
  Tape tape;
  const auto vars = bind_constants(tape, p);
  const Tensor a = attention_pool(tape.constant(rows), valid, vars).pooled.value();
  const Tensor b = attention_pool(tape.constant(shuffled), valid, vars).pooled.value();
  EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

TEST(AttentionPool, AllPaddingGivesZero) {
  std::mt19937_64 rng(6);
  const PoolingParams p = scaled_pool(3, rng);
  Tape tape;
  const std::vector<std::uint8_t> valid{0, 0};
  const PoolOutput out = attention_pool(tape.constant(random_tensor({2, 3}, rng)), valid, bind_constants(tape, p));
  EXPECT_EQ(out.pooled.value(), Tensor::zeros({3}));
}

TEST(Msa, MatchesOracleBothDirections) {
  std::mt19937_64 rng(7);
  const std::size_t d = 4;
  const std::size_t m = 5;
  const MsaParams p = scaled_msa(d, rng);
  const Tensor v = random_tensor({m, d}, rng);
  const std::vector<std::uint8_t> valid{1, 1, 1, 1, 0};
  for (auto dir : {MaskDirection::kForward, MaskDirection::kBackward}) {
    Tape tape;
    const MsaOutput out =
        msa_forward(tape.constant(v), positional_mask(m, dir), valid, bind_constants(tape, p));
    const auto open = [dir](std::size_t i, std::size_t j) {
      return dir == MaskDirection::kForward ? i < j : i > j;
    };
    const oracle::MsaResult ref = oracle::msa(to_matrix(v), valid, testutil::to_oracle(p), open);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t k = 0; k < d; ++k) {
        EXPECT_NEAR(out.output.value().at(j, k), ref.out[j][k], 1e-10);
        for (std::size_t i = 0; i < m; ++i) {
          EXPECT_NEAR(out.probabilities.value().at(j, k, i), ref.probs[j][k][i], 1e-12);
        }
      }
    }
  }
}

TEST(Msa, RowsNormalizedAndSelfExcluded) {
  std::mt19937_64 rng(8);
  const std::size_t d = 3;
  const std::size_t m = 4;
  const MsaParams p = scaled_msa(d, rng);
  const std::vector<std::uint8_t> valid(m, 1);
  Tape tape;
  const MsaOutput out = msa_forward(tape.constant(random_tensor({m, d}, rng)),
                                    positional_mask(m, MaskDirection::kForward), valid,
                                    bind_constants(tape, p));
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < d; ++k) {
      EXPECT_EQ(out.probabilities.value().at(j, k, j), 0.0);
      double total = 0.0;
      for (std::size_t i = 0; i < m; ++i) total += out.probabilities.value().at(j, k, i);
      // The first target has no earlier source.
      EXPECT_NEAR(total, j == 0 ? 0.0 : 1.0, 1e-12);
    }
  }
}

TEST(Msa, PairwiseCompatMatchesSinglePair) {
  std::mt19937_64 rng(9);
  const std::size_t d = 3;
  const MsaParams p = scaled_msa(d, rng);
  const Tensor v = random_tensor({3, d}, rng);
  Tape tape;
  const Tensor all = pairwise_compat(tape.constant(v), bind_constants(tape, p)).value();
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t i = 0; i < 3; ++i) {
      const Tensor one = compat_multidim(v.row(i), v.row(j), p);
      for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(all.at(j, i, k), one[k], 1e-12);
    }
  }
}

TEST(Additive, SingleRowReturnsIt) {
  std::mt19937_64 rng(10);
  const AdditiveParams p = init_additive(3, rng, 0.5);
  const Tensor row = random_tensor({1, 3}, rng);
  Tape tape;
  const Tensor out = additive_attention(tape.constant(row), tape.constant(random_tensor({3}, rng)),
                                        bind_constants(tape, p))
                         .value();
  EXPECT_LT(max_abs_diff(out, row.reshaped({3})), 1e-12);
}

TEST(Additive, EqualScoresAverage) {
  std::mt19937_64 rng(11);
  AdditiveParams p = init_additive(3, rng, 0.5);
  p.w = Tensor::zeros({1, 3});
  const Tensor rows = Tensor::matrix({{1, 2, 3}, {3, 2, 1}, {2, 5, 0}});
  Tape tape;
  const Tensor out =
      additive_attention(tape.constant(rows), tape.constant(Tensor::vector({1, 1, 1})), bind_constants(tape, p))
          .value();
  EXPECT_LT(max_abs_diff(out, Tensor::vector({2, 3, 4.0 / 3.0})), 1e-12);
}

TEST(Additive, MatchesBruteForce) {
  std::mt19937_64 rng(12);
  const std::size_t d = 4;
  const std::size_t n = 5;
  AdditiveParams p = init_additive(d, rng, 0.6);
  p.b1 = random_tensor({d}, rng, 0.2);
  const Tensor rows = random_tensor({n, d}, rng);
  const Tensor q = random_tensor({d}, rng);
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = p.b[0];
    for (std::size_t a = 0; a < d; ++a) {
      double h = p.b1[a];
      for (std::size_t c = 0; c < d; ++c) h += p.w1.at(a, c) * rows.at(i, c) + p.w2.at(a, c) * q[c];
      s += p.w.at(0, a) * std::tanh(h);
    }
    score[i] = s;
  }
  double z = 0.0;
  for (double s : score) z += std::exp(s);
  std::vector<double> expected(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) expected[k] += std::exp(score[i]) / z * rows.at(i, k);
  }
  Tape tape;
  const Tensor out = additive_attention(tape.constant(rows), tape.constant(q), bind_constants(tape, p)).value();
  for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(out[k], expected[k], 1e-12);
}

TEST(Interval, ClampsAtLimit) {
  Tensor table({4, 2});
  for (std::size_t r = 0; r < 4; ++r) table.at(r, 0) = static_cast<double>(r);
  Tape tape;
  const std::vector<int> positions{0, 2, 3, 9000};
  const Tensor out = interval_encode(positions, tape.constant(table)).value();
  EXPECT_EQ(out.at(1, 0), 2.0);
  EXPECT_EQ(out.at(3, 0), 3.0);
  const std::vector<int> negative{-1};
  EXPECT_THROW(interval_encode(negative, tape.constant(table)), ContractError);
}

TEST(LayerGradients, Pooling) {
  std::mt19937_64 rng(13);
  const std::size_t d = 3;
  const PoolingParams p = scaled_pool(d, rng);
  const std::vector<std::uint8_t> valid{1, 0, 1, 1};
  std::vector<Tensor> inputs{random_tensor({4, d}, rng), p.w1, p.b1, p.w, p.b};
  const ScalarFunction f = [&](Tape& tape, std::span<const Var> v) {
    const PoolingVars vars{v[1], v[2], v[3], v[4]};
    Var pooled = attention_pool(v[0], valid, vars).pooled;
    std::mt19937_64 proj(1);
    return ops::sum(ops::mul(pooled, tape.constant(random_tensor({d}, proj))));
  };
  EXPECT_LT(finite_diff_check(f, inputs).max_relative_error, 1e-4);
}

TEST(LayerGradients, Msa) {
  std::mt19937_64 rng(14);
  const std::size_t d = 3;
  const std::size_t m = 4;
  const MsaParams p = scaled_msa(d, rng);
  const std::vector<std::uint8_t> valid{1, 1, 1, 0};
  const PositionalMask mask = positional_mask(m, MaskDirection::kBackward);
  std::vector<Tensor> inputs{random_tensor({m, d}, rng), p.w1, p.w2, p.b1, p.w, p.b, p.ln_gain, p.ln_bias};
  const ScalarFunction f = [&](Tape& tape, std::span<const Var> v) {
    const MsaVars vars{v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
    Var out = msa_forward(v[0], mask, valid, vars).output;
    std::mt19937_64 proj(2);
    Tensor weights = random_tensor({m, d}, proj);
    for (std::size_t k = 0; k < d; ++k) weights.at(m - 1, k) = 0.0;  // padding row
    return ops::sum(ops::mul(out, tape.constant(weights)));
  };
  EXPECT_LT(finite_diff_check(f, inputs).max_relative_error, 1e-4);
}

TEST(LayerGradients, Additive) {
  std::mt19937_64 rng(15);
  const std::size_t d = 3;
  AdditiveParams p = init_additive(d, rng, 0.6);
  std::vector<Tensor> inputs{random_tensor({4, d}, rng), random_tensor({d}, rng), p.w1, p.w2, p.b1, p.w, p.b};
  const ScalarFunction f = [&](Tape& tape, std::span<const Var> v) {
    const AdditiveVars vars{v[2], v[3], v[4], v[5], v[6]};
    Var out = additive_attention(v[0], v[1], vars);
    std::mt19937_64 proj(3);
    return ops::sum(ops::mul(out, tape.constant(random_tensor({d}, proj))));
  };
  EXPECT_LT(finite_diff_check(f, inputs).max_relative_error, 1e-4);
}
