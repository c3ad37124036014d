#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hgformer/tensor.hpp"

namespace hgformer {

struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t size() const { return height * width; }
  bool operator==(const Grid&) const = default;
};

// Node tokens flattened row-major from a spatial grid, plus the summary token
// used to score them.
template <typename T>
struct TokenSet {
  Tensor<T> nodes;        // [N x C]
  Tensor<T> class_token;  // [1 x C]; may be undefined until a block computes it
  Grid grid;

  std::size_t n_nodes() const { return nodes.rows(); }
  std::size_t channels() const { return nodes.cols(); }
  // Throws DimensionError unless N, C >= 1, grid matches N and the class token is [1 x C].
  void validate(bool require_class_token = true) const;
};

// Sparse N x Ne boolean incidence: column j lists the nodes of hyperedge j.
struct IncidenceMatrix {
  std::size_t n_nodes = 0;
  std::vector<std::vector<std::size_t>> members;  // per hyperedge, ascending, exactly k entries
  std::vector<std::size_t> centers;               // per hyperedge, a member of that hyperedge

  std::size_t n_edges() const { return members.size(); }
  std::size_t k() const { return members.empty() ? 0 : members.front().size(); }
  // For every node, the hyperedges containing it (ascending). Rows may be empty.
  std::vector<std::vector<std::size_t>> incident_edges() const;
  // Dense 0/1 matrix, row-major [N x Ne].
  std::vector<std::uint8_t> dense() const;
  void validate() const;

  bool operator==(const IncidenceMatrix&) const = default;
};

struct DegreePair {
  std::vector<std::size_t> node;  // d_v, row sums, may be zero
  std::vector<std::size_t> edge;  // d_e, column sums, all equal to k
};

DegreePair degrees(const IncidenceMatrix& h);

enum class DistanceFn { dot, cosine, euclidean, softmax };
enum class ConstructionAlgo { cs_knn, knn, kmeans, dpc_knn };

std::string_view to_string(DistanceFn d);
std::string_view to_string(ConstructionAlgo a);
DistanceFn parse_distance(std::string_view name);
ConstructionAlgo parse_construction(std::string_view name);

// Class-token attentiveness (x_cls . x_i) / sqrt(C) for every node, in double precision.
template <typename T>
Tensor<double> score_tokens(const TokenSet<T>& tokens);

// Indices of the n_edges largest scores (ties: lower index first), returned ascending.
std::vector<std::size_t> sample_centers(std::span<const double> scores, std::size_t n_edges);
std::vector<std::size_t> sample_centers(const Tensor<double>& scores, std::size_t n_edges);

// Similarity between each center (rows) and every node (columns), larger = nearer.
//   dot:       (x_c . x_i) / sqrt(C)
//   cosine:    (x_c . x_i) / (|x_c| |x_i|), 0 when either norm is 0
//   euclidean: -|x_c - x_i|^2
//   softmax:   for each node, softmax over centers of the dot similarity
template <typename T>
std::vector<double> center_similarity(const Tensor<T>& nodes, std::span<const std::size_t> centers,
                                      DistanceFn distance);

// Each center takes its k most similar nodes (ties: lower index). A center
// outside its own top-k replaces the k-th ranked member.
template <typename T>
IncidenceMatrix knn_assign(const TokenSet<T>& tokens, std::span<const std::size_t> centers, std::size_t k,
                           DistanceFn distance = DistanceFn::dot);

// score_tokens -> sample_centers -> knn_assign.
template <typename T>
IncidenceMatrix cs_knn(const TokenSet<T>& tokens, std::size_t n_edges, std::size_t k,
                       DistanceFn distance = DistanceFn::dot);

inline constexpr std::size_t kKMeansIterations = 20;

// Reference constructors:
//   knn     - every node is a center (n_edges is ignored, Ne = N)
//   kmeans  - Lloyd iterations from a seeded k-means++ start; each centroid takes its
//             k nearest nodes (Euclidean); the nearest node is the center
//   dpc_knn - density peaks (k-NN density x distance to denser node), top n_edges
//             peaks become centers, then knn_assign with `distance`
// cs_knn is accepted and dispatches to cs_knn().
template <typename T>
IncidenceMatrix baseline_construct(const TokenSet<T>& tokens, ConstructionAlgo algo, std::size_t n_edges,
                                   std::size_t k, std::uint64_t seed, DistanceFn distance = DistanceFn::dot);

// Serializable view of one construction, for external visualization.
struct TopologyDump {
  IncidenceMatrix incidence;
  Grid grid;
  std::vector<double> scores;

  // {"n_nodes":..,"n_edges":..,"k":..,"grid":[h,w],"centers":[..],"scores":[..],"edges":[[..],..]}
  std::string to_json() const;
};

}  // namespace hgformer
