#include "hgformer/messaging.hpp"

#include <cmath>
#include <string>

#include "hgformer/errors.hpp"
#include "hgformer/instrumentation.hpp"

namespace hgformer {
namespace {

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
  return act == Activation::gelu ? ops::gelu(x) : x;
}

template <typename T>
Tensor<T> project(const Tensor<T>& x, const Tensor<T>& w) {
  OpCategoryScope scope(OpCategory::projection);
  return ops::matmul(x, w);
}

template <typename T>
void require_square(const char* what, const Tensor<T>& w, std::size_t c) {
  if (w.rank() != 2 || w.rows() != c || w.cols() != c) {
    throw DimensionError(std::string(what) + ": expected [" + std::to_string(c) + "x" + std::to_string(c) +
                         "] weight, got " + shape_to_string(w.shape()));
  }
}

template <typename T>
void audit_rows(const Tensor<T>& p) {
  const std::size_t m = p.rows(), n = p.cols();
  const auto d = p.data();
  std::vector<double> sums(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) sums[i] += static_cast<double>(d[i * n + j]);
  AttentionAudit::record(sums.data(), m);
}

}  // namespace

bool DropPath::keep() const {
  const double u = static_cast<double>((*rng)() >> 11) * 0x1.0p-53;
  return u >= rate;
}

template <typename T>
Tensor<T> apply_layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p) {
  return ops::layer_norm(x, p.gamma, p.beta);
}

template <typename T>
Tensor<T> hgconv_n2e(const Tensor<T>& v, const IncidenceMatrix& h, const Tensor<T>& w, Activation act) {
  if (v.rank() != 2 || v.rows() != h.n_nodes) {
    throw DimensionError("hgconv_n2e: node tokens " + shape_to_string(v.shape()) + " do not match N=" +
                         std::to_string(h.n_nodes));
  }
  require_square("hgconv_n2e", w, v.cols());
  Tensor<T> pooled;
  {
    OpCategoryScope scope(OpCategory::messaging);
    pooled = ops::gather_mean(v, h.members);
  }
  return activate(project(pooled, w), act);
}

template <typename T>
Tensor<T> hgconv_e2n(const Tensor<T>& e, const IncidenceMatrix& h, const Tensor<T>& w, Activation act) {
  if (e.rank() != 2 || e.rows() != h.n_edges()) {
    throw DimensionError("hgconv_e2n: edge tokens " + shape_to_string(e.shape()) + " do not match Ne=" +
                         std::to_string(h.n_edges()));
  }
  require_square("hgconv_e2n", w, e.cols());
  Tensor<T> pooled;
  {
    OpCategoryScope scope(OpCategory::messaging);
    pooled = ops::gather_mean(e, h.incident_edges());
  }
  return activate(project(pooled, w), act);
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& query_src, const Tensor<T>& kv_src, const AttentionParams<T>& attn,
                               std::vector<Tensor<T>>* probs) {
  if (query_src.rank() != 2 || kv_src.rank() != 2 || query_src.cols() != kv_src.cols()) {
    throw DimensionError("attention: query " + shape_to_string(query_src.shape()) + " and key/value " +
                         shape_to_string(kv_src.shape()) + " must share the channel count");
  }
  const std::size_t C = query_src.cols();
  if (attn.n_heads == 0 || C % attn.n_heads != 0) {
    throw ConfigError("attention: " + std::to_string(C) + " channels not divisible by " +
                      std::to_string(attn.n_heads) + " heads");
  }
  require_square("attention w_q", attn.w_q, C);
  require_square("attention w_k", attn.w_k, C);
  require_square("attention w_v", attn.w_v, C);

  const Tensor<T> q = project(query_src, attn.w_q);
  const Tensor<T> k = project(kv_src, attn.w_k);
  const Tensor<T> v = project(kv_src, attn.w_v);

  OpCategoryScope scope(OpCategory::messaging);
  const std::size_t dk = C / attn.n_heads;
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  if (attn.n_heads == 1) {
    const Tensor<T> p = ops::softmax_rows(ops::scale(ops::matmul_nt(q, k), inv_sqrt_dk));
    audit_rows(p);
    if (probs) probs->push_back(p);
    return ops::matmul(p, v);
  }
  std::vector<Tensor<T>> heads;
  heads.reserve(attn.n_heads);
  for (std::size_t hd = 0; hd < attn.n_heads; ++hd) {
    const std::size_t b = hd * dk, e = b + dk;
    const Tensor<T> logits = ops::matmul_nt(ops::slice_cols(q, b, e), ops::slice_cols(k, b, e));
    const Tensor<T> p = ops::softmax_rows(ops::scale(logits, inv_sqrt_dk));
    audit_rows(p);
    if (probs) probs->push_back(p);
    heads.push_back(ops::matmul(p, ops::slice_cols(v, b, e)));
  }
  return ops::concat_cols(heads);
}

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardParams<T>& p, const Grid* grid) {
  OpCategoryScope scope(OpCategory::projection);
  Tensor<T> hidden = ops::add_row(ops::matmul(x, p.fc1_w), p.fc1_b);
  if (grid != nullptr && p.dw_kernel.defined()) {
    if (grid->size() != x.rows()) {
      throw DimensionError("feed_forward: grid " + std::to_string(grid->height) + "x" + std::to_string(grid->width) +
                           " does not match " + std::to_string(x.rows()) + " tokens");
    }
    hidden = ops::depthwise_conv2d_tokens(hidden, grid->height, grid->width, p.dw_kernel);
  }
  return ops::add_row(ops::matmul(ops::gelu(hidden), p.fc2_w), p.fc2_b);
}

template <typename T>
Tensor<T> topo_attention(const Tensor<T>& query_src, const Tensor<T>& kv_src, const AttentionParams<T>& attn,
                         const RefinerParams<T>& refiner, const Grid* grid, const DropPath& dp) {
  const Tensor<T> x = residual(query_src, dp, [&] {
    return multi_head_attention(apply_layer_norm(query_src, refiner.norm_q), apply_layer_norm(kv_src, refiner.norm_kv),
                                attn);
  });
  return residual(x, dp, [&] { return feed_forward(apply_layer_norm(x, refiner.norm_ffn), refiner.ffn, grid); });
}

template <typename T>
Tensor<T> hga_n2e(const Tensor<T>& v, const IncidenceMatrix& h, const HgaParams<T>& params, const DropPath& dp) {
  const Tensor<T> e = hgconv_n2e(apply_layer_norm(v, params.norm_node_in), h, params.w_conv);
  return topo_attention(e, v, params.attn, params.edge_side, nullptr, dp);
}

template <typename T>
Tensor<T> hga_e2n(const Tensor<T>& e, const IncidenceMatrix& h, const Grid* grid, const HgaParams<T>& params,
                  const DropPath& dp) {
  const Tensor<T> v_next = hgconv_e2n(apply_layer_norm(e, params.norm_edge_in), h, params.w_conv);
  return topo_attention(v_next, e, params.attn, params.node_side, grid, dp);
}

#define HGFORMER_INSTANTIATE_MESSAGING(T)                                                                         \
  template Tensor<T> apply_layer_norm(const Tensor<T>&, const LayerNormParams<T>&);                               \
  template Tensor<T> hgconv_n2e(const Tensor<T>&, const IncidenceMatrix&, const Tensor<T>&, Activation);          \
  template Tensor<T> hgconv_e2n(const Tensor<T>&, const IncidenceMatrix&, const Tensor<T>&, Activation);          \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const AttentionParams<T>&,          \
                                          std::vector<Tensor<T>>*);                                               \
  template Tensor<T> feed_forward(const Tensor<T>&, const FeedForwardParams<T>&, const Grid*);                    \
  template Tensor<T> topo_attention(const Tensor<T>&, const Tensor<T>&, const AttentionParams<T>&,                \
                                    const RefinerParams<T>&, const Grid*, const DropPath&);                       \
  template Tensor<T> hga_n2e(const Tensor<T>&, const IncidenceMatrix&, const HgaParams<T>&, const DropPath&);    \
  template Tensor<T> hga_e2n(const Tensor<T>&, const IncidenceMatrix&, const Grid*, const HgaParams<T>&,         \
                             const DropPath&);

HGFORMER_INSTANTIATE_MESSAGING(float)
HGFORMER_INSTANTIATE_MESSAGING(double)

#undef HGFORMER_INSTANTIATE_MESSAGING

}  // namespace hgformer
