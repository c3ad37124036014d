#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "hgformer/errors.hpp"
#include "hgformer/instrumentation.hpp"
#include "hgformer/messaging.hpp"
#include "oracles.hpp"

using namespace hgformer;
using TD = Tensor<double>;

namespace {

IncidenceMatrix single_edge(std::size_t n) {
  IncidenceMatrix h;
  h.n_nodes = n;
  h.centers = {0};
  h.members.emplace_back();
  for (std::size_t i = 0; i < n; ++i) h.members[0].push_back(i);
  return h;
}

IncidenceMatrix identity_pattern(std::size_t n) {
  IncidenceMatrix h;
  h.n_nodes = n;
  for (std::size_t i = 0; i < n; ++i) {
    h.centers.push_back(i);
    h.members.push_back({i});
  }
  return h;
}

void expect_close(const TD& a, const TD& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

void expect_close(const TD& a, const oracle::Matrix& b, double tol) { expect_close(a, oracle::to_tensor(b), tol); }

// Rebuilds parameter sets from flat input lists so finite differences can perturb them.
struct HgaProbe {
  HgaParams<double> templ;

  std::vector<TD> flatten() {
    std::vector<TD> out;
    for (auto* t : fixture::hga_tensors(templ)) out.push_back(*t);
    return out;
  }
  HgaParams<double> rebuild(const std::vector<TD>& in, std::size_t offset) const {
    HgaParams<double> p = templ;
    auto slots = fixture::hga_tensors(p);
    for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = in[offset + i];
    return p;
  }
};

}  // namespace

TEST(HgConv, SingleHyperedgeIsMeanPooling) {
  const TD v({2, 2}, {1, 1, 3, 3});
  const TD e = hgconv_n2e(v, single_edge(2), TD::identity(2), Activation::identity);
  expect_close(e, TD({1, 2}, {2, 2}), 1e-12);
}

TEST(HgConv, IdentityPatternCopiesRows) {
  std::mt19937_64 rng(1);
  const TD v = fixture::random_tensor({5, 3}, rng);
  const auto h = identity_pattern(5);
  expect_close(hgconv_n2e(v, h, TD::identity(3), Activation::identity), v, 0.0);
  expect_close(hgconv_e2n(v, h, TD::identity(3), Activation::identity), v, 0.0);
}

TEST(HgConv, ZeroDegreeNodeGetsGeluOfZero) {
  std::mt19937_64 rng(2);
  IncidenceMatrix h;
  h.n_nodes = 3;
  h.centers = {0};
  h.members = {{0, 2}};
  const TD out = hgconv_e2n(fixture::random_tensor({1, 4}, rng), h, fixture::random_tensor({4, 4}, rng));
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out.at(1, c), 0.0);
}

TEST(HgConv, SparseMatchesDenseFormula) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
    const std::size_t ne = std::uniform_int_distribution<std::size_t>(1, std::min<std::size_t>(8, n))(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, std::max<std::size_t>(1, n / 3))(rng);
    const std::size_t c = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    const auto h = fixture::random_incidence(rng, n, ne, k);
    const auto v = oracle::random_matrix(rng, n, c);
    const auto e = oracle::random_matrix(rng, ne, c);
    const auto w = oracle::random_matrix(rng, c, c);
    const auto dense_h = oracle::dense_incidence(n, h.members);
    expect_close(hgconv_n2e(oracle::to_tensor(v), h, oracle::to_tensor(w), Activation::identity),
                 oracle::dense_n2e(v, dense_h, w), 1e-6);
    expect_close(hgconv_e2n(oracle::to_tensor(e), h, oracle::to_tensor(w), Activation::identity),
                 oracle::dense_e2n(e, dense_h, w), 1e-6);
  }
}

TEST(HgConv, OverSmoothingOnCompleteHyperedge) {
  std::mt19937_64 rng(4);
  const TD v = fixture::random_tensor({6, 3}, rng);
  const auto h = single_edge(6);
  const TD e = hgconv_n2e(v, h, TD::identity(3), Activation::identity);
  const TD back = hgconv_e2n(e, h, TD::identity(3), Activation::identity);
  const TD mean = ops::mean_rows(v);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(back.at(i, c), mean.at(0, c), 1e-12);
}

TEST(HgConv, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(hgconv_n2e(TD::zeros({3, 2}), single_edge(4), TD::identity(2)), DimensionError);
  EXPECT_THROW(hgconv_e2n(TD::zeros({2, 2}), single_edge(4), TD::identity(2)), DimensionError);
}

TEST(Attention, SingleKeyHasWeightOne) {
  std::mt19937_64 rng(5);
  AttentionParams<double> attn{fixture::random_tensor({4, 4}, rng), fixture::random_tensor({4, 4}, rng),
                               fixture::random_tensor({4, 4}, rng), 2};
  const TD kv = fixture::random_tensor({1, 4}, rng);
  std::vector<TD> probs;
  const TD out = multi_head_attention(fixture::random_tensor({3, 4}, rng), kv, attn, &probs);
  ASSERT_EQ(probs.size(), 2u);
  for (const auto& p : probs)
    for (double x : p.data()) EXPECT_EQ(x, 1.0);
  const TD value = ops::matmul(kv, attn.w_v);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at(i, c), value.at(0, c), 1e-12);
}

TEST(Attention, RowsSumToOne) {
  std::mt19937_64 rng(6);
  AttentionParams<double> attn{fixture::random_tensor({8, 8}, rng, 2.0), fixture::random_tensor({8, 8}, rng, 2.0),
                               fixture::random_tensor({8, 8}, rng), 4};
  std::vector<TD> probs;
  multi_head_attention(fixture::random_tensor({5, 8}, rng), fixture::random_tensor({9, 8}, rng), attn, &probs);
  for (const auto& p : probs) {
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) s += p.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Attention, ZeroQueryKeyWeightsGiveUniformMean) {
  std::mt19937_64 rng(7);
  AttentionParams<double> attn{TD::zeros({4, 4}), TD::zeros({4, 4}), fixture::random_tensor({4, 4}, rng), 2};
  const TD kv = fixture::random_tensor({6, 4}, rng);
  std::vector<TD> probs;
  const TD out = multi_head_attention(fixture::random_tensor({2, 4}, rng), kv, attn, &probs);
  for (const auto& p : probs)
    for (double x : p.data()) EXPECT_NEAR(x, 1.0 / 6.0, 1e-15);
  const auto mean = oracle::to_matrix(ops::mean_rows(ops::matmul(kv, attn.w_v)));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at(i, c), mean[0][c], 1e-12);
}

TEST(Attention, HeadCountMustDivideChannels) {
  AttentionParams<double> attn{TD::identity(6), TD::identity(6), TD::identity(6), 4};
  EXPECT_THROW(multi_head_attention(TD::zeros({1, 6}), TD::zeros({1, 6}), attn), ConfigError);
}

TEST(TopoAttention, KeyValuePermutationInvariance) {
  std::mt19937_64 rng(8);
  auto p = fixture::random_hga<double>(8, 2, rng);
  const TD q = fixture::random_tensor({5, 8}, rng);
  const auto kv = oracle::random_matrix(rng, 7, 8);
  auto kv_perm = kv;
  std::shuffle(kv_perm.begin(), kv_perm.end(), rng);
  const TD a = topo_attention(q, oracle::to_tensor(kv), p.attn, p.edge_side, nullptr);
  const TD b = topo_attention(q, oracle::to_tensor(kv_perm), p.attn, p.edge_side, nullptr);
  expect_close(a, b, 1e-6);
}

TEST(TopoAttention, PreservesQueryShape) {
  std::mt19937_64 rng(9);
  auto p = fixture::random_hga<double>(4, 1, rng);
  const Grid grid{2, 3};
  const TD out = topo_attention(fixture::random_tensor({6, 4}, rng), fixture::random_tensor({2, 4}, rng), p.attn,
                                p.node_side, &grid);
  EXPECT_EQ(out.shape(), (Shape{6, 4}));
}

TEST(HgaN2e, OutputShapeIsEdgesByChannels) {
  std::mt19937_64 rng(10);
  auto p = fixture::random_hga<double>(8, 2, rng);
  const auto h = fixture::random_incidence(rng, 12, 3, 4);
  EXPECT_EQ(hga_n2e(fixture::random_tensor({12, 8}, rng), h, p).shape(), (Shape{3, 8}));
}

TEST(HgaN2e, SingleTokenGradientCheck) {
  std::mt19937_64 rng(11);
  HgaProbe probe{fixture::random_hga<double>(4, 1, rng)};
  const auto h = identity_pattern(1);
  std::vector<TD> inputs = {fixture::random_tensor({1, 4}, rng)};
  for (auto& t : probe.flatten()) inputs.push_back(t);
  const TD w = fixture::random_tensor({1, 4}, rng);
  const double err = oracle::max_gradient_error(
      [&](const std::vector<TD>& in) { return ops::sum(ops::mul(hga_n2e(in[0], h, probe.rebuild(in, 1)), w)); },
      inputs);
  EXPECT_LT(err, 1e-4);
}

TEST(HgaE2n, SingleHyperedgeGetsFullAttention) {
  std::mt19937_64 rng(12);
  auto p = fixture::random_hga<double>(4, 2, rng);
  const auto h = fixture::random_incidence(rng, 6, 1, 3);
  const Grid grid{2, 3};
  AttentionAudit audit;
  const TD out = hga_e2n(fixture::random_tensor({1, 4}, rng), h, &grid, p);
  EXPECT_EQ(out.shape(), (Shape{6, 4}));
  EXPECT_EQ(audit.rows_checked(), 12u);
  EXPECT_LT(audit.max_row_sum_error(), 1e-15);
}

TEST(HgaRoundTrip, AllParameterGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  HgaProbe probe{fixture::random_hga<double>(4, 2, rng)};
  const auto h = fixture::random_incidence(rng, 6, 3, 2);
  const Grid grid{2, 3};
  std::vector<TD> inputs = {fixture::random_tensor({6, 4}, rng)};
  for (auto& t : probe.flatten()) inputs.push_back(t);
  const TD w = fixture::random_tensor({6, 4}, rng);
  const double err = oracle::max_gradient_error(
      [&](const std::vector<TD>& in) {
        const auto params = probe.rebuild(in, 1);
        const TD e = hga_n2e(in[0], h, params);
        return ops::sum(ops::mul(hga_e2n(e, h, &grid, params), w));
      },
      inputs);
  EXPECT_LT(err, 1e-4);
}

TEST(HgaRoundTrip, NodePermutationEquivariantWithLinearNodeFfn) {
  std::mt19937_64 rng(14);
  auto p = fixture::random_hga<double>(8, 2, rng);
  const std::size_t n = 10;
  const auto v = oracle::random_matrix(rng, n, 8);
  const auto h = fixture::random_incidence(rng, n, 4, 3);
  std::vector<std::size_t> perm(n);  // new node i is old node perm[i]
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> inverse(n);
  for (std::size_t i = 0; i < n; ++i) inverse[perm[i]] = i;
  oracle::Matrix v_perm(n);
  for (std::size_t i = 0; i < n; ++i) v_perm[i] = v[perm[i]];
  IncidenceMatrix h_perm = h;
  for (std::size_t e = 0; e < h.n_edges(); ++e) {
    h_perm.centers[e] = inverse[h.centers[e]];
    for (auto& m : h_perm.members[e]) m = inverse[m];
    std::sort(h_perm.members[e].begin(), h_perm.members[e].end());
  }
  const TD a = hga_e2n(hga_n2e(oracle::to_tensor(v), h, p), h, nullptr, p);
  const TD b = hga_e2n(hga_n2e(oracle::to_tensor(v_perm), h_perm, p), h_perm, nullptr, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(b.at(i, c), a.at(perm[i], c), 1e-6);
}

TEST(DropPath, RateOneSkipsTheBranch) {
  std::mt19937_64 rng(15);
  const TD x = fixture::random_tensor({3, 2}, rng);
  bool evaluated = false;
  const TD y = residual(x, DropPath{1.0, &rng}, [&] {
    evaluated = true;
    return x;
  });
  EXPECT_FALSE(evaluated);
  expect_close(y, x, 0.0);
}

TEST(DropPath, EvalModeAlwaysKeeps) {
  const TD x = TD::full({2, 2}, 1.0);
  const TD y = residual(x, DropPath{0.9, nullptr}, [&] { return x; });
  expect_close(y, TD::full({2, 2}, 2.0), 0.0);
}

TEST(DropPath, SurvivorsAreRescaled) {
  std::mt19937_64 rng(16);
  const TD x = TD::full({1, 1}, 1.0);
  std::size_t kept = 0;
  for (int i = 0; i < 2000; ++i) {
    const TD y = residual(x, DropPath{0.25, &rng}, [&] { return x; });
    if (y[0] != 1.0) {
      ++kept;
      EXPECT_NEAR(y[0], 1.0 + 1.0 / 0.75, 1e-12);
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / 2000.0, 0.75, 0.05);
}
