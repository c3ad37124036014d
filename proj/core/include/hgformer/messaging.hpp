#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "hgformer/hypergraph.hpp"
#include "hgformer/ops.hpp"
#include "hgformer/tensor.hpp"

// Node -> hyperedge -> node message passing: hypergraph convolution predicts
// tokens, topology-aware attention refines them against the other side.
namespace hgformer {

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;  // [C]
  Tensor<T> beta;   // [C]
};

// fc1 -> [depthwise 3x3 on the token grid] -> GELU -> fc2. The depthwise
// kernel is undefined for the edge-side (linear) feed-forward.
template <typename T>
struct FeedForwardParams {
  Tensor<T> fc1_w;      // [C x hidden]
  Tensor<T> fc1_b;      // [hidden]
  Tensor<T> dw_kernel;  // [hidden x 3 x 3] or undefined
  Tensor<T> fc2_w;      // [hidden x C]
  Tensor<T> fc2_b;      // [C]
};

// Query/key/value projections without bias; heads split the channel axis.
template <typename T>
struct AttentionParams {
  Tensor<T> w_q;  // [C x C]
  Tensor<T> w_k;
  Tensor<T> w_v;
  std::size_t n_heads = 1;
};

// Norms and feed-forward around one attention refinement.
template <typename T>
struct RefinerParams {
  LayerNormParams<T> norm_q;
  LayerNormParams<T> norm_kv;
  LayerNormParams<T> norm_ffn;
  FeedForwardParams<T> ffn;
};

// One node -> hyperedge -> node round trip. A single W and a single attention
// projection set serve both directions.
template <typename T>
struct HgaParams {
  Tensor<T> w_conv;  // [C x C]
  AttentionParams<T> attn;
  LayerNormParams<T> norm_node_in;
  LayerNormParams<T> norm_edge_in;
  RefinerParams<T> edge_side;
  RefinerParams<T> node_side;
};

enum class Activation { gelu, identity };

// Randomly skips residual branches during training. A null rng means eval mode.
struct DropPath {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return rng != nullptr && rate > 0.0; }
  // Draws one uniform in [0, 1) and reports whether the branch survives.
  bool keep() const;
  double keep_scale() const { return 1.0 / (1.0 - rate); }
};

// x + branch(x); in training the branch is dropped (not evaluated) with
// probability `rate`, and surviving branches are scaled by 1 / (1 - rate).
template <typename T, typename Branch>
Tensor<T> residual(const Tensor<T>& x, const DropPath& dp, Branch&& branch) {
  if (dp.active()) {
    if (!dp.keep()) return x;
    return ops::add(x, ops::scale(branch(), static_cast<T>(dp.keep_scale())));
  }
  return ops::add(x, branch());
}

template <typename T>
Tensor<T> apply_layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p);

// E = act(D_e^-1 H^T V W): per-hyperedge mean of member rows, then W.
template <typename T>
Tensor<T> hgconv_n2e(const Tensor<T>& v, const IncidenceMatrix& h, const Tensor<T>& w,
                     Activation act = Activation::gelu);

// V = act(D_v^-1 H E W): per-node mean over incident hyperedges, then W.
// Nodes without incident hyperedges aggregate the zero vector.
template <typename T>
Tensor<T> hgconv_e2n(const Tensor<T>& e, const IncidenceMatrix& h, const Tensor<T>& w,
                     Activation act = Activation::gelu);

// softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated. When `probs` is
// given it receives one [M x P] probability matrix per head.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& query_src, const Tensor<T>& kv_src, const AttentionParams<T>& attn,
                               std::vector<Tensor<T>>* probs = nullptr);

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardParams<T>& p, const Grid* grid);

// x = q + attn(LN(q), LN(kv)); out = x + FFN(LN(x)). The depthwise step of the
// FFN runs only when `grid` is given and the kernel is defined.
template <typename T>
Tensor<T> topo_attention(const Tensor<T>& query_src, const Tensor<T>& kv_src, const AttentionParams<T>& attn,
                         const RefinerParams<T>& refiner, const Grid* grid, const DropPath& dp = {});

// Hyperedge tokens from nodes, refined by attending to all nodes. [Ne x C]
template <typename T>
Tensor<T> hga_n2e(const Tensor<T>& v, const IncidenceMatrix& h, const HgaParams<T>& params,
                  const DropPath& dp = {});

// Node tokens from hyperedges, refined by attending to all hyperedges. [N x C]
// With grid == nullptr the node feed-forward stays linear.
template <typename T>
Tensor<T> hga_e2n(const Tensor<T>& e, const IncidenceMatrix& h, const Grid* grid, const HgaParams<T>& params,
                  const DropPath& dp = {});

}  // namespace hgformer
