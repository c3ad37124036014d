#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "hgformer/dataset.hpp"
#include "hgformer/model.hpp"
#include "hgformer/train.hpp"
#include "json.hpp"

namespace hgformer {

struct AblationArm {
  std::string name;
  NetworkConfig model;
};

// Arms that differ from `base` only in the factor under test:
//   "construction": cs-knn, knn, kmeans, dpc-knn
//   "distance":     dot, cosine, euclidean, softmax
//   "architecture": hga, vanilla, single-stage
std::vector<AblationArm> ablation_arms(std::string_view family, const NetworkConfig& base);

// Names of the NetworkConfig fields on which two configurations differ.
std::vector<std::string> config_differences(const NetworkConfig& a, const NetworkConfig& b);

struct ArmRun {
  std::string arm;
  std::uint64_t seed = 0;
  double final_acc = 0.0;
  double best_val_acc = 0.0;
  double wall_s = 0.0;
};

struct ArmSummary {
  std::string arm;
  std::size_t n_seeds = 0;
  double mean_acc = 0.0;
  double std_acc = 0.0;  // sample standard deviation, 0 for a single seed
};

struct AblationResult {
  std::vector<ArmRun> runs;
  std::vector<ArmSummary> summary;  // one row per arm, in arm order

  const ArmSummary& arm(std::string_view name) const;
  // Header "arm,seed,final_acc,wall_s"; wall_s is 0 when include_timing is false.
  std::string csv(bool include_timing = true) const;
  nlohmann::ordered_json to_json() const;
};

using AblationProgress = std::function<void(const ArmRun&)>;

// Trains every arm with seeds train.seed, train.seed + 1, ...; the seed drives
// both initialization and batch order. Throws ConfigError for fewer than two arms.
AblationResult run_ablation(const std::vector<AblationArm>& arms, const Dataset& ds, const TrainConfig& train,
                            std::size_t n_seeds, const AblationProgress& progress = {});

}  // namespace hgformer
