#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hgformer/model.hpp"
#include "json.hpp"

namespace hgformer {

struct GradCheckOptions {
  std::string variant = "Micro";
  std::size_t n_classes = 2;
  std::size_t image_size = 32;
  std::size_t batch = 2;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Probes per parameter tensor: random unit directions, then single
  // coordinates (the largest-gradient entry first, then random ones).
  std::size_t directions = 1;
  std::size_t coordinates = 2;
  // Gradients below this magnitude are compared absolutely.
  double abs_floor = 1e-8;
};

struct ParamCheck {
  std::string name;
  std::size_t numel = 0;
  std::size_t probes = 0;
  double max_rel_err = 0.0;
  double max_abs_grad = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::string variant;
  std::size_t params_total = 0;
  std::vector<ParamCheck> params;
  double max_rel_err = 0.0;
  bool passed = true;
  double seconds = 0.0;

  std::vector<std::string> failures() const;
  // Schema: {"variant","passed","params_total","params_checked","max_rel_err",
  //          "tolerance","failures":[..],"params":[{"name","numel","probes","max_rel_err","passed"}]}
  nlohmann::ordered_json to_json(double tolerance, bool include_timing = true) const;
};

// |a - b| / max(|a|, |b|), or |a - b| when both magnitudes are below `floor`.
double relative_error(double analytic, double numeric, double floor);

// fp64 central differences against tape gradients of the summed cross-entropy
// of a fixed random batch, for every named parameter of the model.
GradCheckReport grad_check_suite(const GradCheckOptions& options);

// Same check on an existing fp64 model and loss closure inputs.
GradCheckReport grad_check_model(const Model<double>& model, const std::vector<Tensor<double>>& images,
                                 const std::vector<std::size_t>& labels, const GradCheckOptions& options);

}  // namespace hgformer
