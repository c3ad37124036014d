#include "hgformer/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "hgformer/errors.hpp"

namespace hgformer {
namespace {

using Clock = std::chrono::steady_clock;

Tensor<float> random_tensor(Shape shape, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<float> data(shape_numel(shape));
  for (auto& x : data) x = static_cast<float>(d(rng));
  return Tensor<float>(std::move(shape), std::move(data));
}

LayerNormParams<float> unit_norm(std::size_t c) {
  return {Tensor<float>::full({c}, 1.0f), Tensor<float>::zeros({c})};
}

FeedForwardParams<float> random_ffn(std::size_t c, bool conv, std::mt19937_64& rng) {
  const std::size_t hidden = 4 * c;
  FeedForwardParams<float> p;
  p.fc1_w = random_tensor({c, hidden}, rng, 0.02);
  p.fc1_b = Tensor<float>::zeros({hidden});
  if (conv) p.dw_kernel = random_tensor({hidden, 3, 3}, rng, 0.3);
  p.fc2_w = random_tensor({hidden, c}, rng, 0.02);
  p.fc2_b = Tensor<float>::zeros({c});
  return p;
}

}  // namespace

nlohmann::ordered_json BenchReport::to_json(bool include_timing) const {
  nlohmann::ordered_json j;
  j["variant"] = variant;
  j["image_size"] = image_size;
  j["batch"] = batch;
  j["param_count"] = param_count;
  j["median_batch_s"] = include_timing ? median_batch_s : 0.0;
  j["images_per_s"] = include_timing ? images_per_s : 0.0;
  auto& ops = j["ops"] = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < kOpCategoryCount; ++c) {
    const auto cat = static_cast<OpCategory>(c);
    ops[std::string(to_string(cat))] = {{"macs", per_image.flops_of(cat)},
                                        {"seconds", include_timing ? per_image.seconds_of(cat) : 0.0}};
  }
  return j;
}

BenchReport bench_throughput(const BenchConfig& config) {
  if (config.batch == 0 || config.timed_iters == 0) throw ConfigError("bench: batch and timed iterations must be >= 1");
  const NetworkConfig net = variant_config(config.variant, config.n_classes);
  const Model<float> model(net, config.seed);
  std::mt19937_64 rng(config.seed + 1);
  std::vector<Tensor<float>> images;
  for (std::size_t i = 0; i < config.batch; ++i) {
    images.push_back(random_tensor({net.in_channels, config.image_size, config.image_size}, rng, 1.0));
  }

  BenchReport report;
  report.variant = config.variant;
  report.image_size = config.image_size;
  report.batch = config.batch;
  report.param_count = model.parameter_count();

  for (std::size_t it = 0; it < config.warmup_iters; ++it)
    for (const auto& img : images) network_forward(img, model);

  std::vector<double> times;
  OpStats total;
  for (std::size_t it = 0; it < config.timed_iters; ++it) {
    reset_thread_op_stats();
    const auto t0 = Clock::now();
    for (const auto& img : images) network_forward(img, model);
    times.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    total += thread_op_stats();
  }
  std::sort(times.begin(), times.end());
  report.median_batch_s = times[times.size() / 2];
  report.images_per_s = report.median_batch_s > 0.0 ? static_cast<double>(config.batch) / report.median_batch_s : 0.0;
  const double per = 1.0 / static_cast<double>(config.timed_iters * config.batch);
  for (std::size_t c = 0; c < kOpCategoryCount; ++c) {
    report.per_image.flops[c] = total.flops[c] / (config.timed_iters * config.batch);
    report.per_image.seconds[c] = total.seconds[c] * per;
  }
  return report;
}

ScalingPoint measure_block(std::size_t n_nodes, std::size_t channels, std::size_t n_edges, std::size_t k,
                           std::uint64_t seed) {
  if (n_edges < 1 || n_edges > n_nodes || k < 1 || k > n_nodes) {
    throw ConfigError("measure_block: need 1 <= Ne <= N and 1 <= k <= N");
  }
  std::mt19937_64 rng(seed);
  BlockParams<float> params;
  params.cls_scale = Tensor<float>::full({channels}, 1.0f);
  params.cls_bias = Tensor<float>::zeros({channels});
  HgaParams<float>& hp = params.hga;
  hp.w_conv = random_tensor({channels, channels}, rng, 0.02);
  hp.attn = {random_tensor({channels, channels}, rng, 0.02), random_tensor({channels, channels}, rng, 0.02),
             random_tensor({channels, channels}, rng, 0.02), 1};
  hp.norm_node_in = unit_norm(channels);
  hp.norm_edge_in = unit_norm(channels);
  hp.edge_side = {unit_norm(channels), unit_norm(channels), unit_norm(channels), random_ffn(channels, false, rng)};
  hp.node_side = {unit_norm(channels), unit_norm(channels), unit_norm(channels), random_ffn(channels, true, rng)};

  TokenSet<float> tokens;
  tokens.nodes = random_tensor({n_nodes, channels}, rng, 1.0);
  tokens.grid = {1, n_nodes};
  StageConfig stage;
  stage.channels = channels;
  stage.ne_ratio = static_cast<double>(n_edges) / static_cast<double>(n_nodes);
  stage.k_neighbors = k;

  ScalingPoint point{n_nodes, channels, n_edges, k, {}};
  reset_thread_op_stats();
  block_forward(tokens, stage, params, BlockContext{});
  point.stats = thread_op_stats();
  return point;
}

LinearFit fit_linear(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("fit_linear: need at least two paired samples");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw ConfigError("fit_linear: x values are all equal");
  LinearFit fit;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = std::abs(y[i] - (fit.intercept + fit.slope * x[i]));
    fit.max_rel_residual = std::max(fit.max_rel_residual, y[i] != 0.0 ? r / std::abs(y[i]) : r);
  }
  return fit;
}

}  // namespace hgformer
