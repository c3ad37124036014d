#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hgformer/dataset.hpp"
#include "hgformer/model.hpp"
#include "json.hpp"

namespace hgformer {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.05;
  double warmup_epochs = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Global gradient-norm clipping before the optimizer step; 0 disables.
  double grad_clip = 1.0;
  bool flip = true;
  std::uint64_t seed = 0;
  // 0 = HGF_THREADS or hardware concurrency. Results do not depend on it.
  std::size_t threads = 0;
  // Written whenever validation accuracy improves; empty disables.
  std::filesystem::path checkpoint_path;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;  // at the last step of the epoch
};

struct RunReport {
  std::string variant;
  std::string block;
  std::string construction;
  std::string distance;
  std::vector<EpochStats> epochs;
  double final_acc = 0.0;     // validation accuracy after the last epoch
  double best_val_acc = 0.0;  // the checkpointed one
  std::size_t best_epoch = 0;
  double wall_s = 0.0;
  double images_per_s = 0.0;
  std::size_t param_count = 0;
  std::string config_hash;

  // Timing fields are written as 0 when include_timing is false.
  nlohmann::ordered_json to_json(bool include_timing = true) const;
};

// Worker count from HGF_THREADS (if set and positive), else hardware concurrency, capped by `requested` when > 0.
std::size_t resolve_threads(std::size_t requested = 0);

// Learning rate at optimizer step `step` (0-based): linear warmup, then cosine decay to 0.
double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps, std::size_t warmup_steps);

// FNV-1a 64 over the canonical JSON of both configurations, as 16 hex digits.
std::string config_hash(const NetworkConfig& model, const TrainConfig& train);

nlohmann::ordered_json to_json(const NetworkConfig& config);
nlohmann::ordered_json to_json(const TrainConfig& config);

// Classification accuracy in eval mode; 0 for an empty set.
double evaluate(const Model<float>& model, const Dataset& ds, const std::vector<Example>& examples,
                std::size_t threads = 0);

// AdamW with decoupled weight decay (matrices only) and global gradient-norm
// clipping, cross-entropy loss.
// Throws NumericalError with the last learning rate and gradient norm if the
// loss or any activation turns non-finite.
RunReport train(Model<float>& model, const Dataset& ds, const TrainConfig& cfg);

// Builds the model from `config` seeded with cfg.seed, then trains it.
RunReport train(const NetworkConfig& config, const Dataset& ds, const TrainConfig& cfg);

}  // namespace hgformer
