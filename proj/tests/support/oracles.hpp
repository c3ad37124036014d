#pragma once

// Independent reference implementations used by the tests. Nothing here calls
// into the library's construction or messaging code.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "hgformer/tensor.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, std::vector<double>(cols));
  for (auto& r : m)
    for (auto& x : r) x = u(rng);
  return m;
}

inline hgformer::Tensor<double> to_tensor(const Matrix& m, bool requires_grad = false) {
  std::vector<double> flat;
  for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
  return hgformer::Tensor<double>({m.size(), m.empty() ? 0 : m[0].size()}, std::move(flat), requires_grad);
}

inline Matrix to_matrix(const hgformer::Tensor<double>& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t p = 0; p < b.size(); ++p) c[i][j] += a[i][p] * b[p][j];
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline double normalized_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s / std::sqrt(static_cast<double>(a.size()));
}

// Position of element i when `key` is sorted descending, ties to the lower index.
inline std::size_t rank_of(const std::vector<double>& key, std::size_t i) {
  std::size_t r = 0;
  for (std::size_t j = 0; j < key.size(); ++j)
    if (key[j] > key[i] || (key[j] == key[i] && j < i)) ++r;
  return r;
}

struct Hypergraph {
  std::vector<std::size_t> centers;
  std::vector<std::vector<std::size_t>> members;
};

// O(N^2 * Ne) center sampling plus neighbor selection by pairwise rank counting.
inline Hypergraph brute_force_cs_knn(const Matrix& nodes, const std::vector<double>& cls, std::size_t ne,
                                     std::size_t k) {
  const std::size_t n = nodes.size();
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) score[i] = normalized_dot(cls, nodes[i]);
  Hypergraph h;
  for (std::size_t i = 0; i < n; ++i)
    if (rank_of(score, i) < ne) h.centers.push_back(i);
  for (std::size_t c : h.centers) {
    std::vector<double> sim(n);
    for (std::size_t i = 0; i < n; ++i) sim[i] = normalized_dot(nodes[c], nodes[i]);
    std::vector<std::size_t> col;
    bool has_center = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (rank_of(sim, i) < k) {
        col.push_back(i);
        has_center = has_center || i == c;
      }
    }
    if (!has_center) {
      std::size_t last = 0;
      for (std::size_t i : col)
        if (rank_of(sim, i) == k - 1) last = i;
      col.erase(std::find(col.begin(), col.end(), last));
      col.push_back(c);
      std::sort(col.begin(), col.end());
    }
    h.members.push_back(col);
  }
  return h;
}

// Dense 0/1 incidence [N x Ne].
inline Matrix dense_incidence(std::size_t n, const std::vector<std::vector<std::size_t>>& members) {
  Matrix h(n, std::vector<double>(members.size(), 0.0));
  for (std::size_t e = 0; e < members.size(); ++e)
    for (std::size_t v : members[e]) h[v][e] = 1.0;
  return h;
}

// E = D_e^-1 H^T V W with explicit diagonal matrices.
inline Matrix dense_n2e(const Matrix& v, const Matrix& h, const Matrix& w) {
  const std::size_t ne = h[0].size();
  Matrix de_inv(ne, std::vector<double>(ne, 0.0));
  for (std::size_t e = 0; e < ne; ++e) {
    double d = 0.0;
    for (const auto& row : h) d += row[e];
    de_inv[e][e] = d > 0.0 ? 1.0 / d : 0.0;
  }
  return matmul(matmul(matmul(de_inv, transpose(h)), v), w);
}

// V = D_v^-1 H E W; zero-degree rows use a zero inverse entry.
inline Matrix dense_e2n(const Matrix& e, const Matrix& h, const Matrix& w) {
  const std::size_t n = h.size();
  Matrix dv_inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (double x : h[i]) d += x;
    dv_inv[i][i] = d > 0.0 ? 1.0 / d : 0.0;
  }
  return matmul(matmul(matmul(dv_inv, h), e), w);
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s < floor ? std::abs(a - b) : std::abs(a - b) / s;
}

struct ConstructionInstance {
  Matrix nodes;
  std::vector<double> cls;
  std::size_t ne = 1;
  std::size_t k = 1;
};

// Random instance with N <= 64, C <= 8, Ne <= 8, K <= 16. When `ties` is set,
// coordinates come from {-1, 0, 1} and some rows are duplicated, so scores and
// similarities tie exactly and the index tie-break decides membership.
inline ConstructionInstance random_instance(std::mt19937_64& rng, bool ties) {
  std::uniform_int_distribution<std::size_t> dn(1, 64), dc(1, 8);
  ConstructionInstance in;
  const std::size_t n = dn(rng);
  const std::size_t c = dc(rng);
  in.ne = std::uniform_int_distribution<std::size_t>(1, std::min<std::size_t>(8, n))(rng);
  in.k = std::uniform_int_distribution<std::size_t>(1, std::min<std::size_t>(16, n))(rng);
  if (ties) {
    std::uniform_int_distribution<int> tri(-1, 1);
    in.nodes.assign(n, std::vector<double>(c));
    for (auto& r : in.nodes)
      for (auto& x : r) x = tri(rng);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t d = 0; d < n / 4; ++d) in.nodes[pick(rng)] = in.nodes[pick(rng)];
    in.cls.resize(c);
    for (auto& x : in.cls) x = tri(rng);
  } else {
    in.nodes = random_matrix(rng, n, c);
    in.cls = random_matrix(rng, 1, c)[0];
  }
  return in;
}

using LossFn = std::function<hgformer::Tensor<double>(const std::vector<hgformer::Tensor<double>>&)>;

// Max relative error between tape gradients and central differences over every
// element of every input. Inputs are turned into gradient-requiring leaves.
inline double max_gradient_error(const LossFn& loss_fn, std::vector<hgformer::Tensor<double>> inputs,
                                 double h = 1e-5) {
  for (auto& t : inputs) t = hgformer::Tensor<double>(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);
  std::vector<std::vector<double>> analytic;
  {
    hgformer::Tape<double> tape;
    hgformer::TapeScope<double> scope(tape);
    const auto loss = loss_fn(inputs);
    tape.backward(loss, false);
    for (const auto& t : inputs) {
      const auto g = tape.grad(t);
      std::vector<double> v(g.begin(), g.end());
      v.resize(t.numel(), 0.0);
      analytic.push_back(std::move(v));
    }
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    auto data = inputs[a].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double plus = loss_fn(inputs).item();
      data[i] = orig - h;
      const double minus = loss_fn(inputs).item();
      data[i] = orig;
      worst = std::max(worst, rel_err(analytic[a][i], (plus - minus) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace oracle
