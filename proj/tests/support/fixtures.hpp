#pragma once

// Random library-typed inputs shared by the unit and acceptance tests.

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "hgformer/hypergraph.hpp"
#include "hgformer/messaging.hpp"
#include "hgformer/tensor.hpp"

namespace fixture {

template <typename T = double>
hgformer::Tensor<T> random_tensor(hgformer::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<T> v(hgformer::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return hgformer::Tensor<T>(std::move(shape), std::move(v));
}

// Ne hyperedges of k distinct random members each; the first sampled member is the center.
// Nodes may be left uncovered.
inline hgformer::IncidenceMatrix random_incidence(std::mt19937_64& rng, std::size_t n, std::size_t ne, std::size_t k) {
  hgformer::IncidenceMatrix h;
  h.n_nodes = n;
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t e = 0; e < ne; ++e) {
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<std::size_t> col(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
    h.centers.push_back(col.front());
    std::sort(col.begin(), col.end());
    h.members.push_back(col);
  }
  return h;
}

template <typename T>
hgformer::LayerNormParams<T> random_norm(std::size_t c, std::mt19937_64& rng) {
  auto gamma = random_tensor<T>({c}, rng, 0.5);
  auto g = gamma.mutable_data();
  for (auto& x : g) x += T(1);
  return {gamma, random_tensor<T>({c}, rng, 0.1)};
}

template <typename T>
hgformer::FeedForwardParams<T> random_ffn(std::size_t c, std::size_t hidden, bool conv, std::mt19937_64& rng) {
  hgformer::FeedForwardParams<T> p;
  p.fc1_w = random_tensor<T>({c, hidden}, rng, 0.5);
  p.fc1_b = random_tensor<T>({hidden}, rng, 0.1);
  if (conv) p.dw_kernel = random_tensor<T>({hidden, 3, 3}, rng, 0.5);
  p.fc2_w = random_tensor<T>({hidden, c}, rng, 0.5);
  p.fc2_b = random_tensor<T>({c}, rng, 0.1);
  return p;
}

template <typename T>
hgformer::HgaParams<T> random_hga(std::size_t c, std::size_t heads, std::mt19937_64& rng) {
  hgformer::HgaParams<T> p;
  p.w_conv = random_tensor<T>({c, c}, rng, 0.6);
  p.attn = {random_tensor<T>({c, c}, rng, 0.6), random_tensor<T>({c, c}, rng, 0.6),
            random_tensor<T>({c, c}, rng, 0.6), heads};
  p.norm_node_in = random_norm<T>(c, rng);
  p.norm_edge_in = random_norm<T>(c, rng);
  p.edge_side = {random_norm<T>(c, rng), random_norm<T>(c, rng), random_norm<T>(c, rng),
                 random_ffn<T>(c, 2 * c, false, rng)};
  p.node_side = {random_norm<T>(c, rng), random_norm<T>(c, rng), random_norm<T>(c, rng),
                 random_ffn<T>(c, 2 * c, true, rng)};
  return p;
}

// Every tensor of the parameter set, in a fixed order.
template <typename T>
std::vector<hgformer::Tensor<T>*> hga_tensors(hgformer::HgaParams<T>& p) {
  std::vector<hgformer::Tensor<T>*> out = {&p.w_conv, &p.attn.w_q, &p.attn.w_k, &p.attn.w_v,
                                           &p.norm_node_in.gamma, &p.norm_node_in.beta,
                                           &p.norm_edge_in.gamma, &p.norm_edge_in.beta};
  for (auto* side : {&p.edge_side, &p.node_side}) {
    for (auto* n : {&side->norm_q, &side->norm_kv, &side->norm_ffn}) {
      out.push_back(&n->gamma);
      out.push_back(&n->beta);
    }
    out.push_back(&side->ffn.fc1_w);
    out.push_back(&side->ffn.fc1_b);
    if (side->ffn.dw_kernel.defined()) out.push_back(&side->ffn.dw_kernel);
    out.push_back(&side->ffn.fc2_w);
    out.push_back(&side->ffn.fc2_b);
  }
  return out;
}

}  // namespace fixture
