#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "hgformer/checkpoint.hpp"
#include "hgformer/hypergraph.hpp"
#include "hgformer/messaging.hpp"
#include "hgformer/tensor.hpp"

namespace hgformer {

// hga: full node -> hyperedge -> node round trip.
// vanilla_attention: self-derived queries, no hypergraph at all.
// single_stage: node -> hyperedge only, edge tokens averaged back onto nodes.
enum class BlockKind { hga, vanilla_attention, single_stage };

std::string_view to_string(BlockKind k);
BlockKind parse_block_kind(std::string_view name);

struct StageConfig {
  std::size_t depth = 1;
  std::size_t channels = 16;
  double ne_ratio = 1.0;
  std::size_t k_neighbors = 8;
  std::size_t stride = 2;
  std::size_t n_heads = 1;

  // Ne = ceil(ne_ratio * n_nodes), clipped to [1, n_nodes].
  std::size_t edge_count(std::size_t n_nodes) const;
  // K = min(k_neighbors, n_nodes), at least 1.
  std::size_t clipped_k(std::size_t n_nodes) const;
};

struct NetworkConfig {
  std::string variant = "Micro";
  std::size_t base_channels = 16;
  std::array<std::size_t, 4> depths{1, 1, 1, 1};
  std::array<std::size_t, 4> multipliers{1, 2, 5, 8};
  std::array<double, 4> ne_ratios{0.125, 0.25, 0.5, 1.0};
  std::array<std::size_t, 4> k_neighbors{128, 64, 32, 8};
  std::array<std::size_t, 4> strides{4, 2, 2, 2};
  std::size_t head_dim = 16;
  std::size_t mlp_ratio = 4;
  std::size_t in_channels = 3;
  std::size_t n_classes = 1000;
  double drop_path_rate = 0.0;
  BlockKind block = BlockKind::hga;
  ConstructionAlgo construction = ConstructionAlgo::cs_knn;
  DistanceFn distance = DistanceFn::dot;

  std::vector<StageConfig> stages() const;
  // Throws ConfigError on inconsistent settings (heads, ratios, strides, ...).
  void validate() const;
  // Product of strides; input height and width must be multiples of it.
  std::size_t total_stride() const;
};

// Paper variants "T", "S", "B" and the desk-scale "Micro".
NetworkConfig variant_config(std::string_view name, std::size_t n_classes = 1000);
NetworkConfig vanilla_attention_variant(NetworkConfig config);
NetworkConfig single_stage_variant(NetworkConfig config);

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;  // false for norms, biases and other vectors
};

template <typename T>
struct BlockParams {
  Tensor<T> cls_scale;  // [C], elementwise projection of the token mean
  Tensor<T> cls_bias;   // [C]
  HgaParams<T> hga;
};

template <typename T>
struct StageParams {
  Tensor<T> embed_w;  // [stride^2 * C_in x C]
  Tensor<T> embed_b;  // [C]
  LayerNormParams<T> embed_norm;
  std::vector<BlockParams<T>> blocks;
};

struct TopologyRecord {
  std::size_t stage = 0;
  std::size_t block = 0;
  Grid grid;
  IncidenceMatrix incidence;
};

struct ForwardOptions {
  // Stochastic depth is active only when training and rng != nullptr.
  bool training = false;
  std::mt19937_64* rng = nullptr;
  // Replace the depthwise step of node-side feed-forwards with nothing.
  bool grid_ffn = true;
  // When set, every hypergraph built during the pass is appended here.
  std::vector<TopologyRecord>* topologies = nullptr;
};

template <typename T>
class Model {
 public:
  Model(NetworkConfig config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  const std::vector<StageConfig>& stage_configs() const { return stage_configs_; }
  const std::vector<StageParams<T>>& stages() const { return stages_; }
  const std::vector<NamedParam<T>>& parameters() const { return params_; }
  const Tensor<T>* find_parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  const LayerNormParams<T>& head_norm() const { return head_norm_; }
  const Tensor<T>& head_w() const { return head_w_; }
  const Tensor<T>& head_b() const { return head_b_; }

  void zero_grad();
  // Parameters as f32 checkpoint entries, in parameters() order.
  std::vector<NamedArray> state() const;
  // Copies values by name; throws ConfigError on missing names or shape mismatch.
  void load_state(const std::vector<NamedArray>& entries);

 private:
  NetworkConfig config_;
  std::vector<StageConfig> stage_configs_;
  std::vector<StageParams<T>> stages_;
  LayerNormParams<T> head_norm_;
  Tensor<T> head_w_;
  Tensor<T> head_b_;
  std::vector<NamedParam<T>> params_;
};

// Parameter count of a configuration without allocating a model.
std::size_t count_parameters(const NetworkConfig& config);

// image [C_in x H x W] -> tokens on the (H/stride, W/stride) grid, layer-normalized.
template <typename T>
TokenSet<T> patch_embed(const Tensor<T>& image, const StageConfig& stage, const StageParams<T>& params);

// Same embedding applied to an existing token grid (stages 2-4).
template <typename T>
TokenSet<T> patch_embed_tokens(const TokenSet<T>& tokens, const StageConfig& stage, const StageParams<T>& params);

// x_cls = mean(V) * scale + bias.
template <typename T>
Tensor<T> compute_class_token(const Tensor<T>& nodes, const BlockParams<T>& params);

struct BlockContext {
  BlockKind kind = BlockKind::hga;
  ConstructionAlgo construction = ConstructionAlgo::cs_knn;
  DistanceFn distance = DistanceFn::dot;
  std::uint64_t construction_seed = 0;
  bool grid_ffn = true;
  DropPath drop_path;
  // Overrides construction when set (used to test equivariance on a fixed topology).
  const IncidenceMatrix* topology = nullptr;
  IncidenceMatrix* topology_out = nullptr;
};

template <typename T>
TokenSet<T> block_forward(const TokenSet<T>& tokens, const StageConfig& stage, const BlockParams<T>& params,
                          const BlockContext& ctx);

// image [C_in x H x W] -> logits [1 x n_classes].
template <typename T>
Tensor<T> network_forward(const Tensor<T>& image, const Model<T>& model, const ForwardOptions& options = {});

}  // namespace hgformer
