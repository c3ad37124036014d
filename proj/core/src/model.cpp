#include "hgformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hgformer/errors.hpp"
#include "hgformer/instrumentation.hpp"
#include "hgformer/ops.hpp"

namespace hgformer {
namespace {

enum class Init { trunc_normal, depthwise, ones, zeros };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
  bool decay;
};

void add_norm(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t c) {
  out.push_back({prefix + ".gamma", {c}, Init::ones, false});
  out.push_back({prefix + ".beta", {c}, Init::zeros, false});
}

void add_ffn(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t c, std::size_t hidden, bool conv) {
  out.push_back({prefix + ".fc1.weight", {c, hidden}, Init::trunc_normal, true});
  out.push_back({prefix + ".fc1.bias", {hidden}, Init::zeros, false});
  if (conv) out.push_back({prefix + ".dw_kernel", {hidden, 3, 3}, Init::depthwise, true});
  out.push_back({prefix + ".fc2.weight", {hidden, c}, Init::trunc_normal, true});
  out.push_back({prefix + ".fc2.bias", {c}, Init::zeros, false});
}

// Every learnable tensor of a configuration, in a fixed order. Only tensors the
// chosen block kind actually uses are listed.
std::vector<ParamSpec> parameter_layout(const NetworkConfig& config) {
  std::vector<ParamSpec> out;
  const auto stages = config.stages();
  std::size_t c_in = config.in_channels;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const std::size_t c = st.channels;
    const std::string sp = "stage" + std::to_string(s + 1);
    out.push_back({sp + ".embed.weight", {st.stride * st.stride * c_in, c}, Init::trunc_normal, true});
    out.push_back({sp + ".embed.bias", {c}, Init::zeros, false});
    add_norm(out, sp + ".embed.norm", c);
    const std::size_t hidden = c * config.mlp_ratio;
    for (std::size_t b = 0; b < st.depth; ++b) {
      const std::string bp = sp + ".block" + std::to_string(b + 1);
      const bool hypergraph = config.block != BlockKind::vanilla_attention;
      if (hypergraph) {
        out.push_back({bp + ".cls.scale", {c}, Init::ones, false});
        out.push_back({bp + ".cls.bias", {c}, Init::zeros, false});
        out.push_back({bp + ".w_conv", {c, c}, Init::trunc_normal, true});
        add_norm(out, bp + ".norm_node_in", c);
      }
      out.push_back({bp + ".attn.w_q", {c, c}, Init::trunc_normal, true});
      out.push_back({bp + ".attn.w_k", {c, c}, Init::trunc_normal, true});
      out.push_back({bp + ".attn.w_v", {c, c}, Init::trunc_normal, true});
      add_norm(out, bp + ".edge.norm_q", c);
      add_norm(out, bp + ".edge.norm_kv", c);
      add_norm(out, bp + ".edge.norm_ffn", c);
      add_ffn(out, bp + ".edge.ffn", c, hidden, false);
      if (config.block == BlockKind::hga) {
        add_norm(out, bp + ".norm_edge_in", c);
      }
      if (config.block != BlockKind::single_stage) {
        add_norm(out, bp + ".node.norm_q", c);
        add_norm(out, bp + ".node.norm_kv", c);
      }
      add_norm(out, bp + ".node.norm_ffn", c);
      add_ffn(out, bp + ".node.ffn", c, hidden, true);
    }
    c_in = c;
  }
  add_norm(out, "head.norm", c_in);
  out.push_back({"head.weight", {c_in, config.n_classes}, Init::trunc_normal, true});
  out.push_back({"head.bias", {config.n_classes}, Init::zeros, false});
  return out;
}

double truncated_normal(std::mt19937_64& rng, double std) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (;;) {
    const double z = dist(rng);
    if (std::abs(z) <= 2.0) return z * std;
  }
}

template <typename T>
Tensor<T> image_to_tokens(const Tensor<T>& image) {
  if (image.rank() != 3) {
    throw DimensionError("image must be [C x H x W], got " + shape_to_string(image.shape()));
  }
  const std::size_t c = image.dim(0), hw = image.dim(1) * image.dim(2);
  return ops::transpose(ops::reshape(image, Shape{c, hw}));
}

}  // namespace

std::string_view to_string(BlockKind k) {
  switch (k) {
    case BlockKind::hga: return "hga";
    case BlockKind::vanilla_attention: return "vanilla";
    case BlockKind::single_stage: return "single-stage";
  }
  return "unknown";
}

BlockKind parse_block_kind(std::string_view name) {
  for (auto k : {BlockKind::hga, BlockKind::vanilla_attention, BlockKind::single_stage})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown block kind '" + std::string(name) + "' (expected hga, vanilla, single-stage)");
}

std::size_t StageConfig::edge_count(std::size_t n_nodes) const {
  const auto ne = static_cast<std::size_t>(std::ceil(ne_ratio * static_cast<double>(n_nodes) - 1e-9));
  return std::clamp<std::size_t>(ne, 1, std::max<std::size_t>(n_nodes, 1));
}

std::size_t StageConfig::clipped_k(std::size_t n_nodes) const {
  return std::max<std::size_t>(1, std::min(k_neighbors, n_nodes));
}

std::vector<StageConfig> NetworkConfig::stages() const {
  std::vector<StageConfig> out;
  for (std::size_t s = 0; s < 4; ++s) {
    StageConfig st;
    st.depth = depths[s];
    st.channels = base_channels * multipliers[s];
    st.ne_ratio = ne_ratios[s];
    st.k_neighbors = k_neighbors[s];
    st.stride = strides[s];
    st.n_heads = head_dim == 0 ? 0 : st.channels / head_dim;
    out.push_back(st);
  }
  return out;
}

std::size_t NetworkConfig::total_stride() const {
  std::size_t t = 1;
  for (std::size_t s : strides) t *= s;
  return t;
}

void NetworkConfig::validate() const {
  if (base_channels == 0 || in_channels == 0 || n_classes == 0 || mlp_ratio == 0) {
    throw ConfigError("network config: channels, classes and mlp ratio must be positive");
  }
  if (head_dim == 0) throw ConfigError("network config: head_dim must be positive");
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t c = base_channels * multipliers[s];
    if (c == 0 || c % head_dim != 0) {
      throw ConfigError("network config: stage " + std::to_string(s + 1) + " width " + std::to_string(c) +
                        " is not a multiple of head_dim " + std::to_string(head_dim));
    }
    if (!(ne_ratios[s] > 0.0 && ne_ratios[s] <= 1.0)) {
      throw ConfigError("network config: ne_ratio must lie in (0, 1]");
    }
    if (k_neighbors[s] == 0) throw ConfigError("network config: k must be at least 1");
    if (strides[s] == 0) throw ConfigError("network config: stride must be at least 1");
    if (depths[s] == 0) throw ConfigError("network config: every stage needs at least one block");
  }
  if (!(drop_path_rate >= 0.0 && drop_path_rate <= 1.0)) {
    throw ConfigError("network config: drop_path_rate must lie in [0, 1]");
  }
}

NetworkConfig variant_config(std::string_view name, std::size_t n_classes) {
  NetworkConfig c;
  c.variant = std::string(name);
  c.n_classes = n_classes;
  c.depths = {1, 2, 4, 2};
  c.head_dim = 32;
  if (name == "T") {
    c.base_channels = 32;
    c.drop_path_rate = 0.05;
  } else if (name == "S") {
    c.base_channels = 64;
    c.drop_path_rate = 0.1;
  } else if (name == "B") {
    c.base_channels = 96;
    c.drop_path_rate = 0.15;
  } else if (name == "Micro") {
    c.base_channels = 16;
    c.depths = {1, 1, 1, 1};
    c.head_dim = 16;
    c.k_neighbors = {16, 4, 2, 1};
    c.drop_path_rate = 0.0;
  } else {
    throw ConfigError("unknown variant '" + std::string(name) + "' (expected T, S, B, Micro)");
  }
  return c;
}

NetworkConfig vanilla_attention_variant(NetworkConfig config) {
  config.block = BlockKind::vanilla_attention;
  return config;
}

NetworkConfig single_stage_variant(NetworkConfig config) {
  config.block = BlockKind::single_stage;
  return config;
}

std::size_t count_parameters(const NetworkConfig& config) {
  config.validate();
  std::size_t n = 0;
  for (const auto& p : parameter_layout(config)) n += shape_numel(p.shape);
  return n;
}

template <typename T>
Model<T>::Model(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  stage_configs_ = config_.stages();
  std::mt19937_64 rng(seed);
  std::map<std::string, Tensor<T>, std::less<>> by_name;
  for (const auto& spec : parameter_layout(config_)) {
    const std::size_t n = shape_numel(spec.shape);
    std::vector<T> data(n);
    for (auto& v : data) {
      switch (spec.init) {
        case Init::trunc_normal: v = static_cast<T>(truncated_normal(rng, 0.02)); break;
        case Init::depthwise: v = static_cast<T>(truncated_normal(rng, std::sqrt(2.0 / 9.0))); break;
        case Init::ones: v = T(1); break;
        case Init::zeros: v = T(0); break;
      }
    }
    Tensor<T> t(spec.shape, std::move(data), true);
    by_name.emplace(spec.name, t);
    params_.push_back({spec.name, t, spec.decay});
  }
  auto get = [&](const std::string& name) -> Tensor<T> {
    auto it = by_name.find(name);
    return it == by_name.end() ? Tensor<T>() : it->second;
  };
  auto norm = [&](const std::string& prefix) { return LayerNormParams<T>{get(prefix + ".gamma"), get(prefix + ".beta")}; };
  auto ffn = [&](const std::string& prefix) {
    return FeedForwardParams<T>{get(prefix + ".fc1.weight"), get(prefix + ".fc1.bias"), get(prefix + ".dw_kernel"),
                                get(prefix + ".fc2.weight"), get(prefix + ".fc2.bias")};
  };
  for (std::size_t s = 0; s < stage_configs_.size(); ++s) {
    const std::string sp = "stage" + std::to_string(s + 1);
    StageParams<T> st;
    st.embed_w = get(sp + ".embed.weight");
    st.embed_b = get(sp + ".embed.bias");
    st.embed_norm = norm(sp + ".embed.norm");
    for (std::size_t b = 0; b < stage_configs_[s].depth; ++b) {
      const std::string bp = sp + ".block" + std::to_string(b + 1);
      BlockParams<T> bl;
      bl.cls_scale = get(bp + ".cls.scale");
      bl.cls_bias = get(bp + ".cls.bias");
      bl.hga.w_conv = get(bp + ".w_conv");
      bl.hga.attn = {get(bp + ".attn.w_q"), get(bp + ".attn.w_k"), get(bp + ".attn.w_v"), stage_configs_[s].n_heads};
      bl.hga.norm_node_in = norm(bp + ".norm_node_in");
      bl.hga.norm_edge_in = norm(bp + ".norm_edge_in");
      bl.hga.edge_side = {norm(bp + ".edge.norm_q"), norm(bp + ".edge.norm_kv"), norm(bp + ".edge.norm_ffn"),
                          ffn(bp + ".edge.ffn")};
      bl.hga.node_side = {norm(bp + ".node.norm_q"), norm(bp + ".node.norm_kv"), norm(bp + ".node.norm_ffn"),
                          ffn(bp + ".node.ffn")};
      st.blocks.push_back(std::move(bl));
    }
    stages_.push_back(std::move(st));
  }
  head_norm_ = norm("head.norm");
  head_w_ = get("head.weight");
  head_b_ = get("head.bias");
}

template <typename T>
const Tensor<T>* Model<T>::find_parameter(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
std::vector<NamedArray> Model<T>::state() const {
  std::vector<NamedArray> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(to_named_array(p.name, p.tensor));
  return out;
}

template <typename T>
void Model<T>::load_state(const std::vector<NamedArray>& entries) {
  std::map<std::string, const NamedArray*, std::less<>> by_name;
  for (const auto& e : entries) by_name.emplace(e.name, &e);
  for (auto& p : params_) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing parameter '" + p.name + "'");
    const NamedArray& a = *it->second;
    if (a.shape != p.tensor.shape()) {
      throw ConfigError("checkpoint parameter '" + p.name + "' has shape " + shape_to_string(a.shape) +
                        ", model expects " + shape_to_string(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(a.data[i]);
  }
}

template <typename T>
TokenSet<T> patch_embed_tokens(const TokenSet<T>& tokens, const StageConfig& stage, const StageParams<T>& params) {
  const std::size_t s = stage.stride;
  if (tokens.grid.height % s != 0 || tokens.grid.width % s != 0) {
    throw ConfigError("patch embed: grid " + std::to_string(tokens.grid.height) + "x" +
                      std::to_string(tokens.grid.width) + " is not divisible by stride " + std::to_string(s));
  }
  TokenSet<T> out;
  out.grid = {tokens.grid.height / s, tokens.grid.width / s};
  Tensor<T> patches = ops::patchify(tokens.nodes, tokens.grid.height, tokens.grid.width, s);
  Tensor<T> embedded;
  {
    OpCategoryScope scope(OpCategory::projection);
    embedded = ops::add_row(ops::matmul(patches, params.embed_w), params.embed_b);
  }
  out.nodes = apply_layer_norm(embedded, params.embed_norm);
  return out;
}

template <typename T>
TokenSet<T> patch_embed(const Tensor<T>& image, const StageConfig& stage, const StageParams<T>& params) {
  TokenSet<T> in;
  in.nodes = image_to_tokens(image);
  in.grid = {image.dim(1), image.dim(2)};
  return patch_embed_tokens(in, stage, params);
}

template <typename T>
Tensor<T> compute_class_token(const Tensor<T>& nodes, const BlockParams<T>& params) {
  return ops::add_row(ops::mul_row(ops::mean_rows(nodes), params.cls_scale), params.cls_bias);
}

template <typename T>
TokenSet<T> block_forward(const TokenSet<T>& tokens, const StageConfig& stage, const BlockParams<T>& params,
                          const BlockContext& ctx) {
  tokens.validate(false);
  const Tensor<T>& v = tokens.nodes;
  const std::size_t n = tokens.n_nodes();
  const Grid* grid = ctx.grid_ffn ? &tokens.grid : nullptr;
  const HgaParams<T>& hp = params.hga;
  const DropPath& dp = ctx.drop_path;

  TokenSet<T> out;
  out.grid = tokens.grid;

  if (ctx.kind == BlockKind::vanilla_attention) {
    out.nodes = residual(v, dp, [&] {
      const Tensor<T> e = topo_attention(v, v, hp.attn, hp.edge_side, nullptr, dp);
      return topo_attention(e, e, hp.attn, hp.node_side, grid, dp);
    });
    return out;
  }

  IncidenceMatrix h;
  if (ctx.topology != nullptr) {
    h = *ctx.topology;
    if (h.n_nodes != n) throw DimensionError("block: fixed topology does not match the token count");
  } else {
    TokenSet<T> detached;
    detached.nodes = v.detach();
    detached.grid = tokens.grid;
    const std::size_t ne = stage.edge_count(n);
    const std::size_t k = stage.clipped_k(n);
    if (ctx.construction == ConstructionAlgo::cs_knn) {
      detached.class_token = compute_class_token(v, params).detach();
      h = cs_knn(detached, ne, k, ctx.distance);
    } else {
      h = baseline_construct(detached, ctx.construction, ne, k, ctx.construction_seed, ctx.distance);
    }
  }
  if (ctx.topology_out != nullptr) *ctx.topology_out = h;

  if (ctx.kind == BlockKind::single_stage) {
    out.nodes = residual(v, dp, [&] {
      const Tensor<T> e = hga_n2e(v, h, hp, dp);
      Tensor<T> x;
      {
        OpCategoryScope scope(OpCategory::messaging);
        x = ops::gather_mean(e, h.incident_edges());
      }
      return residual(x, dp, [&] {
        return feed_forward(apply_layer_norm(x, hp.node_side.norm_ffn), hp.node_side.ffn, grid);
      });
    });
    return out;
  }

  out.nodes = residual(v, dp, [&] {
    const Tensor<T> e = hga_n2e(v, h, hp, dp);
    return hga_e2n(e, h, grid, hp, dp);
  });
  return out;
}

template <typename T>
Tensor<T> network_forward(const Tensor<T>& image, const Model<T>& model, const ForwardOptions& options) {
  const NetworkConfig& cfg = model.config();
  if (image.rank() != 3 || image.dim(0) != cfg.in_channels) {
    throw DimensionError("network: expected a [" + std::to_string(cfg.in_channels) + " x H x W] image, got " +
                         shape_to_string(image.shape()));
  }
  const std::size_t ts = cfg.total_stride();
  if (image.dim(1) % ts != 0 || image.dim(2) % ts != 0) {
    throw ConfigError("network: image " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                      " is not divisible by " + std::to_string(ts));
  }
  const auto& stage_cfgs = model.stage_configs();
  TokenSet<T> tokens;
  for (std::size_t s = 0; s < stage_cfgs.size(); ++s) {
    const auto& sp = model.stages()[s];
    tokens = s == 0 ? patch_embed(image, stage_cfgs[s], sp) : patch_embed_tokens(tokens, stage_cfgs[s], sp);
    for (std::size_t b = 0; b < sp.blocks.size(); ++b) {
      BlockContext ctx;
      ctx.kind = cfg.block;
      ctx.construction = cfg.construction;
      ctx.distance = cfg.distance;
      ctx.construction_seed = (static_cast<std::uint64_t>(s) << 32) | b;
      ctx.grid_ffn = options.grid_ffn;
      if (options.training && options.rng != nullptr) ctx.drop_path = DropPath{cfg.drop_path_rate, options.rng};
      IncidenceMatrix record;
      if (options.topologies != nullptr && cfg.block != BlockKind::vanilla_attention) ctx.topology_out = &record;
      tokens = block_forward(tokens, stage_cfgs[s], sp.blocks[b], ctx);
      if (ctx.topology_out != nullptr) options.topologies->push_back({s, b, tokens.grid, std::move(record)});
    }
  }
  const Tensor<T> pooled = ops::mean_rows(apply_layer_norm(tokens.nodes, model.head_norm()));
  OpCategoryScope scope(OpCategory::projection);
  return ops::add_row(ops::matmul(pooled, model.head_w()), model.head_b());
}

#define HGFORMER_INSTANTIATE_MODEL(T)                                                                             \
  template class Model<T>;                                                                                        \
  template TokenSet<T> patch_embed(const Tensor<T>&, const StageConfig&, const StageParams<T>&);                  \
  template TokenSet<T> patch_embed_tokens(const TokenSet<T>&, const StageConfig&, const StageParams<T>&);         \
  template Tensor<T> compute_class_token(const Tensor<T>&, const BlockParams<T>&);                                \
  template TokenSet<T> block_forward(const TokenSet<T>&, const StageConfig&, const BlockParams<T>&,               \
                                     const BlockContext&);                                                        \
  template Tensor<T> network_forward(const Tensor<T>&, const Model<T>&, const ForwardOptions&);

HGFORMER_INSTANTIATE_MODEL(float)
HGFORMER_INSTANTIATE_MODEL(double)

#undef HGFORMER_INSTANTIATE_MODEL

}  // namespace hgformer
