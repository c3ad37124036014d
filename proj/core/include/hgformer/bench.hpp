#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hgformer/instrumentation.hpp"
#include "hgformer/model.hpp"
#include "json.hpp"

namespace hgformer {

struct BenchConfig {
  std::string variant = "Micro";
  std::size_t image_size = 32;
  std::size_t batch = 1;
  std::size_t warmup_iters = 2;
  std::size_t timed_iters = 5;
  std::size_t n_classes = 1000;
  std::uint64_t seed = 0;
};

struct BenchReport {
  std::string variant;
  std::size_t image_size = 0;
  std::size_t batch = 0;
  std::size_t param_count = 0;
  double median_batch_s = 0.0;
  double images_per_s = 0.0;
  OpStats per_image;  // counters and exclusive times of one image's forward pass

  // Timing fields are written as 0 when include_timing is false.
  nlohmann::ordered_json to_json(bool include_timing = true) const;
};

// Eval-mode fp32 forward passes on seeded random images; median over the timed iterations.
BenchReport bench_throughput(const BenchConfig& config);

// One hypergraph block on random tokens of the given size, measured in isolation.
struct ScalingPoint {
  std::size_t n_nodes = 0;
  std::size_t channels = 0;
  std::size_t n_edges = 0;
  std::size_t k = 0;
  OpStats stats;  // construction + messaging + projection of one block forward
};

ScalingPoint measure_block(std::size_t n_nodes, std::size_t channels, std::size_t n_edges, std::size_t k,
                           std::uint64_t seed = 0);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  // max |y - fit(x)| / |y| over the samples
  double max_rel_residual = 0.0;
};

// Ordinary least squares y = intercept + slope * x.
LinearFit fit_linear(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace hgformer
