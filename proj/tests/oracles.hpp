#pragma once
// Reference implementations written directly from the formulas with plain
// loops over std::vector. They share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;  // row-major [rows][cols]

inline std::vector<double> affine(const Matrix& w, const std::vector<double>& x,
                                  const std::vector<double>& b) {
  std::vector<double> out(w.size());
  for (std::size_t r = 0; r < w.size(); ++r) {
    double acc = b.empty() ? 0.0 : b[r];
    for (std::size_t c = 0; c < x.size(); ++c) acc += w[r][c] * x[c];
    out[r] = acc;
  }
  return out;
}

struct Pooling {
  Matrix w1, w;
  std::vector<double> b1, b;
};

struct Msa {
  Matrix w1, w2, w;
  std::vector<double> b1, b, gain, bias;
};

struct PoolResult {
  std::vector<double> pooled;  // [d]
  Matrix probs;                // [d][n]
};

// f(v) = W tanh(W1 v + b1) + b; per feature k a softmax over valid rows.
inline PoolResult pool(const Matrix& rows, const std::vector<std::uint8_t>& valid, const Pooling& p) {
  const std::size_t n = rows.size();
  const std::size_t d = p.b.size();
  Matrix scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> h = affine(p.w1, rows[i], p.b1);
    for (double& x : h) x = std::tanh(x);
    scores[i] = affine(p.w, h, p.b);
  }
  PoolResult r{std::vector<double>(d, 0.0), Matrix(d, std::vector<double>(n, 0.0))};
  for (std::size_t k = 0; k < d; ++k) {
    double mx = -1e300;
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (valid[i]) {
        mx = std::max(mx, scores[i][k]);
        any = true;
      }
    }
    if (!any) continue;
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (valid[i]) z += std::exp(scores[i][k] - mx);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!valid[i]) continue;
      r.probs[k][i] = std::exp(scores[i][k] - mx) / z;
      r.pooled[k] += r.probs[k][i] * rows[i][k];
    }
  }
  return r;
}

struct MsaResult {
  Matrix out;                              // [m][d]
  std::vector<Matrix> probs;               // [j][k][i]
};

// open(i, j): source i may inform target j.
template <typename Open>
MsaResult msa(const Matrix& v, const std::vector<std::uint8_t>& valid, const Msa& p, Open open,
              double eps = 1e-5) {
  const std::size_t m = v.size();
  const std::size_t d = p.b.size();
  MsaResult r{Matrix(m, std::vector<double>(d, 0.0)),
              std::vector<Matrix>(m, Matrix(d, std::vector<double>(m, 0.0)))};
  for (std::size_t j = 0; j < m; ++j) {
    // f(v_i, v_j) for every source i.
    Matrix f(m);
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> h(d);
      for (std::size_t a = 0; a < d; ++a) {
        double acc = p.b1[a];
        for (std::size_t c = 0; c < d; ++c) acc += p.w1[a][c] * v[i][c] + p.w2[a][c] * v[j][c];
        h[a] = std::tanh(acc);
      }
      f[i] = affine(p.w, h, p.b);
    }
    std::vector<double> s(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      double mx = -1e300;
      bool any = false;
      for (std::size_t i = 0; i < m; ++i) {
        if (valid[i] && open(i, j)) {
          mx = std::max(mx, f[i][k]);
          any = true;
        }
      }
      if (!any) continue;
      double z = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        if (valid[i] && open(i, j)) z += std::exp(f[i][k] - mx);
      }
      for (std::size_t i = 0; i < m; ++i) {
        if (!(valid[i] && open(i, j))) continue;
        r.probs[j][k][i] = std::exp(f[i][k] - mx) / z;
        s[k] += r.probs[j][k][i] * v[i][k];
      }
    }
    // u = LayerNorm(ReLU(v + s)), biased variance.
    std::vector<double> fused(d);
    for (std::size_t k = 0; k < d; ++k) fused[k] = std::max(0.0, v[j][k] + s[k]);
    double mean = 0.0;
    for (double x : fused) mean += x;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double x : fused) var += (x - mean) * (x - mean);
    var /= static_cast<double>(d);
    for (std::size_t k = 0; k < d; ++k) {
      r.out[j][k] = p.gain[k] * (fused[k] - mean) / std::sqrt(var + eps) + p.bias[k];
    }
  }
  return r;
}

// Average precision as the mean, over positives, of the precision at each
// positive's rank. Ranks follow descending score with ties kept in input
// order.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  const std::size_t n = scores.size();
  auto rank = [&](std::size_t i) {
    std::size_t r = 1;
    for (std::size_t o = 0; o < n; ++o) {
      if (scores[o] > scores[i] || (scores[o] == scores[i] && o < i)) ++r;
    }
    return r;
  };
  double total = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 1) continue;
    ++positives;
    const std::size_t ri = rank(i);
    std::size_t hits = 0;
    for (std::size_t o = 0; o < n; ++o) {
      if (labels[o] == 1 && rank(o) <= ri) ++hits;
    }
    total += static_cast<double>(hits) / static_cast<double>(ri);
  }
  return total / static_cast<double>(positives);
}

// Precision over the first `cut` ranked items, for every cut; the area is
// the sum of precision times the recall increment.
inline double prefix_sweep_ap(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  double area = 0.0;
  double previous_recall = 0.0;
  for (std::size_t cut = 1; cut <= order.size(); ++cut) {
    double hits = 0.0;
    for (std::size_t t = 0; t < cut; ++t) hits += labels[order[t]] == 1 ? 1.0 : 0.0;
    const double recall = hits / positives;
    area += (recall - previous_recall) * (hits / static_cast<double>(cut));
    previous_recall = recall;
  }
  return area;
}

inline double precision_at_k(const Matrix& scores, const std::vector<std::vector<int>>& labels,
                             std::size_t k) {
  double total = 0.0;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    std::vector<std::size_t> classes(scores[e].size());
    std::iota(classes.begin(), classes.end(), 0);
    std::sort(classes.begin(), classes.end(), [&](std::size_t a, std::size_t b) {
      if (scores[e][a] != scores[e][b]) return scores[e][a] > scores[e][b];
      return a < b;
    });
    std::size_t hits = 0;
    for (std::size_t t = 0; t < std::min(k, classes.size()); ++t) {
      if (std::find(labels[e].begin(), labels[e].end(), static_cast<int>(classes[t])) != labels[e].end()) {
        ++hits;
      }
    }
    total += static_cast<double>(hits) / static_cast<double>(std::min(k, labels[e].size()));
  }
  return total / static_cast<double>(scores.size());
}

}  // namespace oracle
