#include "hgformer/gradcheck.hpp"

#include <algorithm>
#include <numeric>
#include <chrono>
#include <cmath>
#include <random>

#include "hgformer/ops.hpp"

namespace hgformer {
namespace {

double batch_loss(const Model<double>& model, const std::vector<Tensor<double>>& images,
                  const std::vector<std::size_t>& labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    total += ops::cross_entropy(network_forward(images[i], model), labels[i]).item();
  }
  return total;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double diff = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  return scale < floor ? diff : diff / scale;
}

std::vector<std::string> GradCheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& p : params)
    if (!p.passed) out.push_back(p.name);
  return out;
}

nlohmann::ordered_json GradCheckReport::to_json(double tolerance, bool include_timing) const {
  nlohmann::ordered_json j;
  j["variant"] = variant;
  j["passed"] = passed;
  j["params_total"] = params_total;
  j["params_checked"] = params.size();
  j["max_rel_err"] = max_rel_err;
  j["tolerance"] = tolerance;
  j["seconds"] = include_timing ? seconds : 0.0;
  j["failures"] = failures();
  auto& arr = j["params"] = nlohmann::ordered_json::array();
  for (const auto& p : params) {
    arr.push_back({{"name", p.name},
                   {"numel", p.numel},
                   {"probes", p.probes},
                   {"max_rel_err", p.max_rel_err},
                   {"passed", p.passed}});
  }
  return j;
}

GradCheckReport grad_check_model(const Model<double>& model, const std::vector<Tensor<double>>& images,
                                 const std::vector<std::size_t>& labels, const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport report;
  report.variant = model.config().variant;
  report.params_total = model.parameters().size();

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> loss;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const Tensor<double> li = ops::cross_entropy(network_forward(images[i], model), labels[i]);
      loss = loss.defined() ? ops::add(loss, li) : li;
    }
    tape.backward(loss, false);
    for (const auto& p : model.parameters()) {
      const auto g = tape.grad(p.tensor);
      analytic.emplace_back(g.begin(), g.end());
      analytic.back().resize(p.tensor.numel(), 0.0);
    }
  }

  std::mt19937_64 rng(options.seed ^ 0x5851f42d4c957f2dULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double h = options.step;
  for (std::size_t pi = 0; pi < model.parameters().size(); ++pi) {
    Tensor<double> tensor = model.parameters()[pi].tensor;
    const std::vector<double>& g = analytic[pi];
    const std::size_t n = tensor.numel();
    const std::vector<double> original(tensor.data().begin(), tensor.data().end());

    ParamCheck check;
    check.name = model.parameters()[pi].name;
    check.numel = n;
    for (double x : g) check.max_abs_grad = std::max(check.max_abs_grad, std::abs(x));

    auto probe = [&](const std::vector<double>& dir) {
      auto w = tensor.mutable_data();
      for (std::size_t j = 0; j < n; ++j) w[j] = original[j] + h * dir[j];
      const double plus = batch_loss(model, images, labels);
      for (std::size_t j = 0; j < n; ++j) w[j] = original[j] - h * dir[j];
      const double minus = batch_loss(model, images, labels);
      std::copy(original.begin(), original.end(), w.begin());
      double a = 0.0;
      for (std::size_t j = 0; j < n; ++j) a += g[j] * dir[j];
      const double numeric = (plus - minus) / (2.0 * h);
      check.max_rel_err = std::max(check.max_rel_err, relative_error(a, numeric, options.abs_floor));
      check.probes += 1;
    };

    // The first direction follows the analytic gradient, which maximizes the
    // directional derivative relative to rounding noise; the rest are random.
    double g_norm = 0.0;
    for (double x : g) g_norm += x * x;
    g_norm = std::sqrt(g_norm);
    for (std::size_t d = 0; d < options.directions; ++d) {
      std::vector<double> dir(n);
      if (d == 0 && g_norm > 0.0) {
        for (std::size_t j = 0; j < n; ++j) dir[j] = g[j] / g_norm;
      } else {
        double norm = 0.0;
        for (auto& x : dir) {
          x = normal(rng);
          norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : dir) x /= norm;
      }
      probe(dir);
    }
    // Single coordinates go to the largest-magnitude entries, where the central
    // difference is well above fp64 rounding noise.
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    const std::size_t n_coords = std::min(options.coordinates, n);
    std::partial_sort(coords.begin(), coords.begin() + static_cast<std::ptrdiff_t>(n_coords), coords.end(),
                      [&](std::size_t a, std::size_t b) {
                        return std::abs(g[a]) > std::abs(g[b]) || (std::abs(g[a]) == std::abs(g[b]) && a < b);
                      });
    coords.resize(n_coords);
    for (std::size_t j : coords) {
      std::vector<double> dir(n, 0.0);
      dir[j] = 1.0;
      probe(dir);
    }
    check.passed = check.max_rel_err < options.tolerance;
    report.passed = report.passed && check.passed;
    report.max_rel_err = std::max(report.max_rel_err, check.max_rel_err);
    report.params.push_back(std::move(check));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

GradCheckReport grad_check_suite(const GradCheckOptions& options) {
  const NetworkConfig config = variant_config(options.variant, options.n_classes);
  const Model<double> model(config, options.seed);
  std::mt19937_64 rng(options.seed + 1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Tensor<double>> images;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < options.batch; ++i) {
    std::vector<double> px(config.in_channels * options.image_size * options.image_size);
    for (auto& x : px) x = u(rng);
    images.emplace_back(Shape{config.in_channels, options.image_size, options.image_size}, std::move(px));
    labels.push_back(i % options.n_classes);
  }
  return grad_check_model(model, images, labels, options);
}

}  // namespace hgformer
