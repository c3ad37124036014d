#include "hgformer/hypergraph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "hgformer/errors.hpp"
#include "hgformer/instrumentation.hpp"
#include "json.hpp"

namespace hgformer {
namespace {

// Orders candidate indices by descending key, lower index first on ties.
struct ByKeyDesc {
  const double* key;
  bool operator()(std::size_t a, std::size_t b) const {
    if (key[a] != key[b]) return key[a] > key[b];
    return a < b;
  }
};

std::vector<std::size_t> top_k(std::span<const double> key, std::size_t k) {
  std::vector<std::size_t> idx(key.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), ByKeyDesc{key.data()});
  idx.resize(k);
  return idx;
}

template <typename T>
double dot_row(const T* a, const T* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

template <typename T>
double squared_distance(const T* a, const T* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

void check_k(std::size_t k, std::size_t n) {
  if (k < 1 || k > n) {
    throw ConfigError("hyperedge degree k=" + std::to_string(k) + " must lie in [1, N=" + std::to_string(n) + "]");
  }
}

// Each hyperedge = the k highest entries of its similarity row, with its center forced in.
IncidenceMatrix select_members(std::size_t n_nodes, std::span<const std::size_t> centers,
                               const std::vector<double>& sim, std::size_t k) {
  IncidenceMatrix h;
  h.n_nodes = n_nodes;
  h.centers.assign(centers.begin(), centers.end());
  h.members.reserve(centers.size());
  for (std::size_t e = 0; e < centers.size(); ++e) {
    std::span<const double> row(sim.data() + e * n_nodes, n_nodes);
    auto members = top_k(row, k);
    if (std::find(members.begin(), members.end(), centers[e]) == members.end()) members.back() = centers[e];
    std::sort(members.begin(), members.end());
    h.members.push_back(std::move(members));
  }
  return h;
}

template <typename T>
IncidenceMatrix kmeans_construct(const TokenSet<T>& tokens, std::size_t n_edges, std::size_t k, std::uint64_t seed) {
  const std::size_t N = tokens.n_nodes(), C = tokens.channels();
  const T* x = tokens.nodes.data().data();
  std::mt19937_64 rng(seed);

  // k-means++ seeding
  std::vector<double> centroids;
  centroids.reserve(n_edges * C);
  auto push_centroid = [&](std::size_t i) {
    for (std::size_t c = 0; c < C; ++c) centroids.push_back(static_cast<double>(x[i * C + c]));
  };
  auto nearest_sq = [&](std::size_t i, std::size_t n_centroids) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n_centroids; ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double diff = static_cast<double>(x[i * C + c]) - centroids[j * C + c];
        d += diff * diff;
      }
      best = std::min(best, d);
    }
    return best;
  };
  push_centroid(static_cast<std::size_t>(rng() % N));
  for (std::size_t j = 1; j < n_edges; ++j) {
    std::vector<double> weight(N);
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) total += weight[i] = nearest_sq(i, j);
    std::size_t pick = 0;
    if (total > 0.0) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
      double run = 0.0;
      pick = N - 1;
      for (std::size_t i = 0; i < N; ++i) {
        run += weight[i];
        if (u < run) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng() % N);
    }
    push_centroid(pick);
  }

  // Lloyd iterations
  std::vector<std::size_t> assign(N, 0);
  for (std::size_t iter = 0; iter < kKMeansIterations; ++iter) {
    for (std::size_t i = 0; i < N; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n_edges; ++j) {
        double d = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          const double diff = static_cast<double>(x[i * C + c]) - centroids[j * C + c];
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          assign[i] = j;
        }
      }
    }
    std::vector<double> sums(n_edges * C, 0.0);
    std::vector<std::size_t> counts(n_edges, 0);
    for (std::size_t i = 0; i < N; ++i) {
      counts[assign[i]] += 1;
      for (std::size_t c = 0; c < C; ++c) sums[assign[i] * C + c] += static_cast<double>(x[i * C + c]);
    }
    for (std::size_t j = 0; j < n_edges; ++j) {
      if (counts[j] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t c = 0; c < C; ++c) centroids[j * C + c] = sums[j * C + c] / static_cast<double>(counts[j]);
    }
  }
  count_flops(static_cast<std::uint64_t>(kKMeansIterations) * N * n_edges * C);

  std::vector<double> sim(n_edges * N);
  for (std::size_t j = 0; j < n_edges; ++j) {
    for (std::size_t i = 0; i < N; ++i) {
      double d = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double diff = static_cast<double>(x[i * C + c]) - centroids[j * C + c];
        d += diff * diff;
      }
      sim[j * N + i] = -d;
    }
  }
  IncidenceMatrix h;
  h.n_nodes = N;
  for (std::size_t j = 0; j < n_edges; ++j) {
    std::span<const double> row(sim.data() + j * N, N);
    auto members = top_k(row, k);
    h.centers.push_back(members.front());
    std::sort(members.begin(), members.end());
    h.members.push_back(std::move(members));
  }
  return h;
}

template <typename T>
std::vector<std::size_t> density_peaks(const TokenSet<T>& tokens, std::size_t n_edges, std::size_t k) {
  const std::size_t N = tokens.n_nodes(), C = tokens.channels();
  const T* x = tokens.nodes.data().data();
  std::vector<double> dist(N * N, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = i + 1; j < N; ++j) dist[i * N + j] = dist[j * N + i] = std::sqrt(squared_distance(x + i * C, x + j * C, C));
  count_flops(static_cast<std::uint64_t>(N) * N * C / 2);

  // rho_i = exp(-mean squared distance to the k nearest other nodes)
  const std::size_t kd = std::min(k, N - 1);
  std::vector<double> rho(N, 1.0);
  if (kd > 0) {
    for (std::size_t i = 0; i < N; ++i) {
      std::vector<double> d;
      d.reserve(N - 1);
      for (std::size_t j = 0; j < N; ++j)
        if (j != i) d.push_back(dist[i * N + j]);
      std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kd), d.end());
      double acc = 0.0;
      for (std::size_t q = 0; q < kd; ++q) acc += d[q] * d[q];
      rho[i] = std::exp(-acc / static_cast<double>(kd));
    }
  }
  // "denser" is a strict order: higher rho, then lower index.
  auto denser = [&](std::size_t j, std::size_t i) { return rho[j] > rho[i] || (rho[j] == rho[i] && j < i); };
  std::vector<double> gamma(N);
  for (std::size_t i = 0; i < N; ++i) {
    double delta = std::numeric_limits<double>::infinity();
    double farthest = 0.0;
    bool has_denser = false;
    for (std::size_t j = 0; j < N; ++j) {
      if (j == i) continue;
      farthest = std::max(farthest, dist[i * N + j]);
      if (denser(j, i)) {
        has_denser = true;
        delta = std::min(delta, dist[i * N + j]);
      }
    }
    if (!has_denser) delta = farthest;
    gamma[i] = rho[i] * delta;
  }
  return sample_centers(gamma, n_edges);
}

}  // namespace

template <typename T>
void TokenSet<T>::validate(bool require_class_token) const {
  if (!nodes.defined() || nodes.rank() != 2 || nodes.rows() == 0 || nodes.cols() == 0) {
    throw DimensionError("token set: nodes must be a non-empty [N x C] matrix");
  }
  if (grid.size() != nodes.rows()) {
    throw DimensionError("token set: grid " + std::to_string(grid.height) + "x" + std::to_string(grid.width) +
                         " does not cover N=" + std::to_string(nodes.rows()));
  }
  if (require_class_token) {
    if (!class_token.defined() || class_token.numel() != nodes.cols()) {
      throw DimensionError("token set: class token must be [1 x " + std::to_string(nodes.cols()) + "]");
    }
  }
}

std::vector<std::vector<std::size_t>> IncidenceMatrix::incident_edges() const {
  std::vector<std::vector<std::size_t>> rows(n_nodes);
  for (std::size_t e = 0; e < members.size(); ++e)
    for (std::size_t v : members[e]) rows[v].push_back(e);
  return rows;
}

std::vector<std::uint8_t> IncidenceMatrix::dense() const {
  std::vector<std::uint8_t> h(n_nodes * n_edges(), 0);
  for (std::size_t e = 0; e < members.size(); ++e)
    for (std::size_t v : members[e]) h[v * n_edges() + e] = 1;
  return h;
}

void IncidenceMatrix::validate() const {
  if (members.empty()) throw ConfigError("incidence: no hyperedges");
  if (centers.size() != members.size()) throw ConfigError("incidence: one center per hyperedge required");
  const std::size_t kk = k();
  if (kk == 0) throw ConfigError("incidence: empty hyperedge");
  for (std::size_t e = 0; e < members.size(); ++e) {
    const auto& col = members[e];
    if (col.size() != kk) throw ConfigError("incidence: hyperedge " + std::to_string(e) + " has wrong size");
    for (std::size_t i = 0; i < col.size(); ++i) {
      if (col[i] >= n_nodes) throw ConfigError("incidence: member index out of range");
      if (i > 0 && col[i] <= col[i - 1]) throw ConfigError("incidence: members must be distinct and ascending");
    }
    if (!std::binary_search(col.begin(), col.end(), centers[e])) {
      throw ConfigError("incidence: center of hyperedge " + std::to_string(e) + " is not a member");
    }
  }
}

DegreePair degrees(const IncidenceMatrix& h) {
  DegreePair d;
  d.node.assign(h.n_nodes, 0);
  d.edge.reserve(h.n_edges());
  for (const auto& col : h.members) {
    d.edge.push_back(col.size());
    for (std::size_t v : col) d.node[v] += 1;
  }
  return d;
}

std::string_view to_string(DistanceFn d) {
  switch (d) {
    case DistanceFn::dot: return "dot";
    case DistanceFn::cosine: return "cosine";
    case DistanceFn::euclidean: return "euclidean";
    case DistanceFn::softmax: return "softmax";
  }
  return "unknown";
}

std::string_view to_string(ConstructionAlgo a) {
  switch (a) {
    case ConstructionAlgo::cs_knn: return "cs-knn";
    case ConstructionAlgo::knn: return "knn";
    case ConstructionAlgo::kmeans: return "kmeans";
    case ConstructionAlgo::dpc_knn: return "dpc-knn";
  }
  return "unknown";
}

DistanceFn parse_distance(std::string_view name) {
  for (auto d : {DistanceFn::dot, DistanceFn::cosine, DistanceFn::euclidean, DistanceFn::softmax})
    if (to_string(d) == name) return d;
  throw ConfigError("unknown distance function '" + std::string(name) + "' (expected dot, cosine, euclidean, softmax)");
}

ConstructionAlgo parse_construction(std::string_view name) {
  for (auto a : {ConstructionAlgo::cs_knn, ConstructionAlgo::knn, ConstructionAlgo::kmeans, ConstructionAlgo::dpc_knn})
    if (to_string(a) == name) return a;
  throw ConfigError("unknown construction algorithm '" + std::string(name) +
                    "' (expected cs-knn, knn, kmeans, dpc-knn)");
}

template <typename T>
Tensor<double> score_tokens(const TokenSet<T>& tokens) {
  tokens.validate();
  OpCategoryScope scope(OpCategory::construction);
  const std::size_t N = tokens.n_nodes(), C = tokens.channels();
  const T* x = tokens.nodes.data().data();
  const T* cls = tokens.class_token.data().data();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(C));
  std::vector<double> scores(N);
  for (std::size_t i = 0; i < N; ++i) scores[i] = dot_row(cls, x + i * C, C) * inv_sqrt_d;
  count_flops(static_cast<std::uint64_t>(N) * C);
  return Tensor<double>(Shape{N}, std::move(scores));
}

std::vector<std::size_t> sample_centers(std::span<const double> scores, std::size_t n_edges) {
  if (n_edges < 1 || n_edges > scores.size()) {
    throw ConfigError("hyperedge count Ne=" + std::to_string(n_edges) + " must lie in [1, N=" +
                      std::to_string(scores.size()) + "]");
  }
  auto centers = top_k(scores, n_edges);
  std::sort(centers.begin(), centers.end());
  return centers;
}

std::vector<std::size_t> sample_centers(const Tensor<double>& scores, std::size_t n_edges) {
  return sample_centers(scores.data(), n_edges);
}

template <typename T>
std::vector<double> center_similarity(const Tensor<T>& nodes, std::span<const std::size_t> centers,
                                      DistanceFn distance) {
  const std::size_t N = nodes.rows(), C = nodes.cols(), E = centers.size();
  const T* x = nodes.data().data();
  std::vector<double> sim(E * N);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(C));
  std::vector<double> norms;
  if (distance == DistanceFn::cosine) {
    norms.resize(N);
    for (std::size_t i = 0; i < N; ++i) norms[i] = std::sqrt(dot_row(x + i * C, x + i * C, C));
  }
  for (std::size_t e = 0; e < E; ++e) {
    const std::size_t c = centers[e];
    if (c >= N) throw ConfigError("center index " + std::to_string(c) + " out of range");
    const T* xc = x + c * C;
    for (std::size_t i = 0; i < N; ++i) {
      const T* xi = x + i * C;
      double s = 0.0;
      switch (distance) {
        case DistanceFn::dot:
        case DistanceFn::softmax: s = dot_row(xc, xi, C) * inv_sqrt_d; break;
        case DistanceFn::cosine: {
          const double denom = norms[c] * norms[i];
          s = denom > 0.0 ? dot_row(xc, xi, C) / denom : 0.0;
          break;
        }
        case DistanceFn::euclidean: s = -squared_distance(xc, xi, C); break;
      }
      sim[e * N + i] = s;
    }
  }
  if (distance == DistanceFn::softmax) {
    for (std::size_t i = 0; i < N; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < E; ++e) mx = std::max(mx, sim[e * N + i]);
      double total = 0.0;
      for (std::size_t e = 0; e < E; ++e) total += sim[e * N + i] = std::exp(sim[e * N + i] - mx);
      for (std::size_t e = 0; e < E; ++e) sim[e * N + i] /= total;
    }
  }
  count_flops(static_cast<std::uint64_t>(E) * N * C);
  return sim;
}

template <typename T>
IncidenceMatrix knn_assign(const TokenSet<T>& tokens, std::span<const std::size_t> centers, std::size_t k,
                           DistanceFn distance) {
  tokens.validate(false);
  OpCategoryScope scope(OpCategory::construction);
  check_k(k, tokens.n_nodes());
  if (centers.empty()) throw ConfigError("knn_assign: no centers");
  const auto sim = center_similarity(tokens.nodes, centers, distance);
  return select_members(tokens.n_nodes(), centers, sim, k);
}

template <typename T>
IncidenceMatrix cs_knn(const TokenSet<T>& tokens, std::size_t n_edges, std::size_t k, DistanceFn distance) {
  check_k(k, tokens.n_nodes());
  const auto scores = score_tokens(tokens);
  const auto centers = sample_centers(scores, n_edges);
  return knn_assign(tokens, centers, k, distance);
}

template <typename T>
IncidenceMatrix baseline_construct(const TokenSet<T>& tokens, ConstructionAlgo algo, std::size_t n_edges,
                                   std::size_t k, std::uint64_t seed, DistanceFn distance) {
  switch (algo) {
    case ConstructionAlgo::cs_knn: return cs_knn(tokens, n_edges, k, distance);
    case ConstructionAlgo::knn: {
      tokens.validate(false);
      std::vector<std::size_t> all(tokens.n_nodes());
      std::iota(all.begin(), all.end(), std::size_t{0});
      return knn_assign(tokens, all, k, distance);
    }
    case ConstructionAlgo::kmeans: {
      tokens.validate(false);
      check_k(k, tokens.n_nodes());
      if (n_edges < 1 || n_edges > tokens.n_nodes()) {
        throw ConfigError("kmeans: Ne=" + std::to_string(n_edges) + " must lie in [1, N]");
      }
      OpCategoryScope scope(OpCategory::construction);
      return kmeans_construct(tokens, n_edges, k, seed);
    }
    case ConstructionAlgo::dpc_knn: {
      tokens.validate(false);
      check_k(k, tokens.n_nodes());
      std::vector<std::size_t> centers;
      {
        OpCategoryScope scope(OpCategory::construction);
        centers = density_peaks(tokens, n_edges, k);
      }
      return knn_assign(tokens, centers, k, distance);
    }
  }
  throw ConfigError("baseline_construct: invalid algorithm tag");
}

std::string TopologyDump::to_json() const {
  nlohmann::ordered_json j;
  j["n_nodes"] = incidence.n_nodes;
  j["n_edges"] = incidence.n_edges();
  j["k"] = incidence.k();
  j["grid"] = {grid.height, grid.width};
  j["centers"] = incidence.centers;
  j["scores"] = scores;
  j["edges"] = incidence.members;
  return j.dump();
}

#define HGFORMER_INSTANTIATE_HYPERGRAPH(T)                                                                          \
  template struct TokenSet<T>;                                                                                      \
  template Tensor<double> score_tokens(const TokenSet<T>&);                                                         \
  template std::vector<double> center_similarity(const Tensor<T>&, std::span<const std::size_t>, DistanceFn);       \
  template IncidenceMatrix knn_assign(const TokenSet<T>&, std::span<const std::size_t>, std::size_t, DistanceFn);   \
  template IncidenceMatrix cs_knn(const TokenSet<T>&, std::size_t, std::size_t, DistanceFn);                        \
  template IncidenceMatrix baseline_construct(const TokenSet<T>&, ConstructionAlgo, std::size_t, std::size_t,      \
                                              std::uint64_t, DistanceFn);

HGFORMER_INSTANTIATE_HYPERGRAPH(float)
HGFORMER_INSTANTIATE_HYPERGRAPH(double)

#undef HGFORMER_INSTANTIATE_HYPERGRAPH

}  // namespace hgformer
