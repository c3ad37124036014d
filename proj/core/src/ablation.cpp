#include "hgformer/ablation.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "hgformer/errors.hpp"

namespace hgformer {

std::vector<AblationArm> ablation_arms(std::string_view family, const NetworkConfig& base) {
  std::vector<AblationArm> arms;
  if (family == "construction") {
    for (auto a : {ConstructionAlgo::cs_knn, ConstructionAlgo::knn, ConstructionAlgo::kmeans, ConstructionAlgo::dpc_knn}) {
      NetworkConfig c = base;
      c.construction = a;
      arms.push_back({std::string(to_string(a)), c});
    }
  } else if (family == "distance") {
    for (auto d : {DistanceFn::dot, DistanceFn::cosine, DistanceFn::euclidean, DistanceFn::softmax}) {
      NetworkConfig c = base;
      c.distance = d;
      arms.push_back({std::string(to_string(d)), c});
    }
  } else if (family == "architecture") {
    arms.push_back({"hga", base});
    arms.push_back({"vanilla", vanilla_attention_variant(base)});
    arms.push_back({"single-stage", single_stage_variant(base)});
  } else {
    throw ConfigError("unknown ablation family '" + std::string(family) +
                      "' (expected construction, distance, architecture)");
  }
  return arms;
}

std::vector<std::string> config_differences(const NetworkConfig& a, const NetworkConfig& b) {
  const auto ja = to_json(a), jb = to_json(b);
  std::vector<std::string> out;
  for (const auto& [key, value] : ja.items())
    if (jb.at(key) != value) out.push_back(key);
  return out;
}

const ArmSummary& AblationResult::arm(std::string_view name) const {
  for (const auto& s : summary)
    if (s.arm == name) return s;
  throw ConfigError("ablation result has no arm '" + std::string(name) + "'");
}

std::string AblationResult::csv(bool include_timing) const {
  std::ostringstream os;
  os << "arm,seed,final_acc,wall_s\n";
  os << std::setprecision(6) << std::fixed;
  for (const auto& r : runs) {
    os << r.arm << ',' << r.seed << ',' << r.final_acc << ',' << (include_timing ? r.wall_s : 0.0) << '\n';
  }
  return os.str();
}

nlohmann::ordered_json AblationResult::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& s : summary) {
    j.push_back({{"arm", s.arm}, {"n_seeds", s.n_seeds}, {"mean_acc", s.mean_acc}, {"std_acc", s.std_acc}});
  }
  return j;
}

AblationResult run_ablation(const std::vector<AblationArm>& arms, const Dataset& ds, const TrainConfig& train_cfg,
                            std::size_t n_seeds, const AblationProgress& progress) {
  if (arms.size() < 2) throw ConfigError("ablation needs at least two arms");
  if (n_seeds < 1) throw ConfigError("ablation needs at least one seed");
  AblationResult result;
  for (const auto& arm : arms) {
    ArmSummary summary;
    summary.arm = arm.name;
    summary.n_seeds = n_seeds;
    std::vector<double> accs;
    for (std::size_t i = 0; i < n_seeds; ++i) {
      TrainConfig cfg = train_cfg;
      cfg.seed = train_cfg.seed + i;
      cfg.checkpoint_path.clear();
      const RunReport report = train(arm.model, ds, cfg);
      ArmRun run{arm.name, cfg.seed, report.final_acc, report.best_val_acc, report.wall_s};
      accs.push_back(run.final_acc);
      result.runs.push_back(run);
      if (progress) progress(run);
    }
    double mean = 0.0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    summary.mean_acc = mean;
    summary.std_acc = accs.size() > 1 ? std::sqrt(var / static_cast<double>(accs.size() - 1)) : 0.0;
    result.summary.push_back(summary);
  }
  return result;
}

}  // namespace hgformer
