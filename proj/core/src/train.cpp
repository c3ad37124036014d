#include "hgformer/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "hgformer/checkpoint.hpp"
#include "hgformer/errors.hpp"
#include "hgformer/ops.hpp"

namespace hgformer {
namespace {

// Fixed work split, so results never depend on the number of workers.
constexpr std::size_t kChunkSize = 8;

using Clock = std::chrono::steady_clock;

std::size_t argmax(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Runs job(i) for i in [0, n) on up to `threads` workers; rethrows the first
// failure in index order.
template <typename Job>
void parallel_for(std::size_t n, std::size_t threads, Job&& job) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      job(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) run(i);
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t step, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(index)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct ChunkResult {
  std::vector<std::vector<float>> grads;  // per parameter
  double loss = 0.0;
  std::size_t correct = 0;
};

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train: batch size must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train: learning rate must be finite and >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight decay must be >= 0");
  if (!(warmup_epochs >= 0.0)) throw ConfigError("train: warmup epochs must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("train: gradient clip norm must be >= 0");
}

std::size_t resolve_threads(std::size_t requested) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HGF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) n = static_cast<std::size_t>(v);
  }
  if (requested > 0) n = std::min(n, requested);
  return n;
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps, std::size_t warmup_steps) {
  if (step < warmup_steps) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const std::size_t decay_steps = total_steps > warmup_steps ? total_steps - warmup_steps : 1;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(decay_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

nlohmann::ordered_json to_json(const NetworkConfig& c) {
  nlohmann::ordered_json j;
  j["variant"] = c.variant;
  j["base_channels"] = c.base_channels;
  j["depths"] = c.depths;
  j["multipliers"] = c.multipliers;
  j["ne_ratios"] = c.ne_ratios;
  j["k_neighbors"] = c.k_neighbors;
  j["strides"] = c.strides;
  j["head_dim"] = c.head_dim;
  j["mlp_ratio"] = c.mlp_ratio;
  j["in_channels"] = c.in_channels;
  j["n_classes"] = c.n_classes;
  j["drop_path_rate"] = c.drop_path_rate;
  j["block"] = to_string(c.block);
  j["construction"] = to_string(c.construction);
  j["distance"] = to_string(c.distance);
  return j;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["warmup_epochs"] = c.warmup_epochs;
  j["grad_clip"] = c.grad_clip;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["flip"] = c.flip;
  j["seed"] = c.seed;
  return j;
}

std::string config_hash(const NetworkConfig& model, const TrainConfig& train) {
  nlohmann::ordered_json j;
  j["model"] = to_json(model);
  j["train"] = to_json(train);
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

nlohmann::ordered_json RunReport::to_json(bool include_timing) const {
  nlohmann::ordered_json j;
  j["variant"] = variant;
  j["block"] = block;
  j["construction"] = construction;
  j["distance"] = distance;
  j["param_count"] = param_count;
  j["config_hash"] = config_hash;
  j["final_acc"] = final_acc;
  j["best_val_acc"] = best_val_acc;
  j["best_epoch"] = best_epoch;
  j["wall_s"] = include_timing ? wall_s : 0.0;
  j["images_per_s"] = include_timing ? images_per_s : 0.0;
  auto& ep = j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"train_acc", e.train_acc},
                  {"val_acc", e.val_acc},
                  {"lr", e.lr}});
  }
  return j;
}

double evaluate(const Model<float>& model, const Dataset& ds, const std::vector<Example>& examples,
                std::size_t threads) {
  if (examples.empty()) return 0.0;
  std::vector<std::uint8_t> hit(examples.size(), 0);
  const std::size_t n_chunks = (examples.size() + kChunkSize - 1) / kChunkSize;
  parallel_for(n_chunks, resolve_threads(threads), [&](std::size_t c) {
    const std::size_t end = std::min(examples.size(), (c + 1) * kChunkSize);
    for (std::size_t i = c * kChunkSize; i < end; ++i) {
      const Tensor<float> logits = network_forward(example_image<float>(ds, examples[i]), model);
      hit[i] = argmax(logits.data()) == examples[i].label;
    }
  });
  return static_cast<double>(std::accumulate(hit.begin(), hit.end(), std::size_t{0})) /
         static_cast<double>(examples.size());
}

RunReport train(Model<float>& model, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.train.empty()) throw ConfigError("train: empty training set");
  if (ds.n_classes != model.config().n_classes) {
    throw ConfigError("train: dataset has " + std::to_string(ds.n_classes) + " classes, model predicts " +
                      std::to_string(model.config().n_classes));
  }
  const auto start = Clock::now();
  const std::size_t threads = resolve_threads(cfg.threads);
  const auto& params = model.parameters();
  const std::size_t n_params = params.size();

  std::vector<std::vector<double>> m(n_params), v(n_params);
  for (std::size_t p = 0; p < n_params; ++p) {
    m[p].assign(params[p].tensor.numel(), 0.0);
    v[p].assign(params[p].tensor.numel(), 0.0);
  }

  RunReport report;
  report.variant = model.config().variant;
  report.block = std::string(to_string(model.config().block));
  report.construction = std::string(to_string(model.config().construction));
  report.distance = std::string(to_string(model.config().distance));
  report.param_count = model.parameter_count();
  report.config_hash = config_hash(model.config(), cfg);

  const std::size_t n_train = ds.train.size();
  const std::size_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const auto warmup_steps = static_cast<std::size_t>(std::llround(cfg.warmup_epochs * static_cast<double>(steps_per_epoch)));
  std::mt19937_64 order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n_train);

  std::size_t step = 0;
  double lr = 0.0, grad_norm = 0.0;
  report.best_val_acc = -1.0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b0 = 0; b0 < n_train; b0 += cfg.batch_size, ++step) {
      const std::size_t b1 = std::min(n_train, b0 + cfg.batch_size);
      const std::size_t batch = b1 - b0;
      const float inv_batch = 1.0f / static_cast<float>(batch);
      lr = scheduled_lr(cfg, step, total_steps, warmup_steps);

      const std::size_t n_chunks = (batch + kChunkSize - 1) / kChunkSize;
      std::vector<ChunkResult> chunks(n_chunks);
      try {
        parallel_for(n_chunks, threads, [&](std::size_t c) {
          ChunkResult& res = chunks[c];
          res.grads.resize(n_params);
          for (std::size_t p = 0; p < n_params; ++p) res.grads[p].assign(params[p].tensor.numel(), 0.0f);
          const std::size_t i_end = std::min(batch, (c + 1) * kChunkSize);
          for (std::size_t i = c * kChunkSize; i < i_end; ++i) {
            const Example& ex = ds.train[order[b0 + i]];
            std::mt19937_64 rng(sample_seed(cfg.seed, step, i));
            const bool flip = cfg.flip && (rng() & 1u);
            Tape<float> tape;
            TapeScope<float> scope(tape);
            ForwardOptions opts;
            opts.training = true;
            opts.rng = &rng;
            const Tensor<float> logits = network_forward(example_image<float>(ds, ex, flip), model, opts);
            const Tensor<float> loss = ops::scale(ops::cross_entropy(logits, ex.label), inv_batch);
            res.loss += static_cast<double>(loss.item()) * batch;
            res.correct += argmax(logits.data()) == ex.label;
            tape.backward(loss, false);
            for (std::size_t p = 0; p < n_params; ++p) {
              const auto g = tape.grad(params[p].tensor);
              auto& acc = res.grads[p];
              for (std::size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
            }
          }
        });
      } catch (const NumericalError& e) {
        std::ostringstream os;
        os << e.what() << " (epoch " << epoch << ", step " << step << ", lr " << lr << ", last grad norm "
           << grad_norm << ")";
        throw NumericalError(os.str());
      }

      double sq = 0.0;
      std::vector<std::vector<float>>& grads = chunks[0].grads;
      for (std::size_t c = 0; c < n_chunks; ++c) {
        loss_sum += chunks[c].loss;
        correct += chunks[c].correct;
        if (c == 0) continue;
        for (std::size_t p = 0; p < n_params; ++p)
          for (std::size_t j = 0; j < grads[p].size(); ++j) grads[p][j] += chunks[c].grads[p][j];
      }
      for (const auto& g : grads)
        for (float x : g) sq += static_cast<double>(x) * x;
      grad_norm = std::sqrt(sq);
      if (!std::isfinite(grad_norm)) {
        std::ostringstream os;
        os << "non-finite gradient (epoch " << epoch << ", step " << step << ", lr " << lr << ")";
        throw NumericalError(os.str());
      }

      if (cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip) {
        const auto factor = static_cast<float>(cfg.grad_clip / grad_norm);
        for (auto& g : grads)
          for (float& x : g) x *= factor;
      }
      const double t = static_cast<double>(step + 1);
      const double bc1 = 1.0 - std::pow(cfg.beta1, t), bc2 = 1.0 - std::pow(cfg.beta2, t);
      for (std::size_t p = 0; p < n_params; ++p) {
        Tensor<float> tensor = params[p].tensor;
        auto w = tensor.mutable_data();
        const double wd = params[p].decay ? cfg.weight_decay : 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
          const double g = grads[p][j];
          m[p][j] = cfg.beta1 * m[p][j] + (1.0 - cfg.beta1) * g;
          v[p][j] = cfg.beta2 * v[p][j] + (1.0 - cfg.beta2) * g * g;
          const double update = (m[p][j] / bc1) / (std::sqrt(v[p][j] / bc2) + cfg.adam_eps);
          w[j] = static_cast<float>(w[j] - lr * (update + wd * w[j]));
        }
      }
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(n_train);
    st.train_acc = static_cast<double>(correct) / static_cast<double>(n_train);
    try {
      st.val_acc = evaluate(model, ds, ds.val, threads);
    } catch (const NumericalError& e) {
      std::ostringstream os;
      os << e.what() << " (validation after epoch " << epoch << ", lr " << lr << ", last grad norm " << grad_norm
         << ")";
      throw NumericalError(os.str());
    }
    st.lr = lr;
    report.epochs.push_back(st);
    if (st.val_acc > report.best_val_acc) {
      report.best_val_acc = st.val_acc;
      report.best_epoch = epoch;
      if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, model.state());
    }
  }
  report.final_acc = report.epochs.back().val_acc;
  report.wall_s = std::chrono::duration<double>(Clock::now() - start).count();
  report.images_per_s =
      report.wall_s > 0.0 ? static_cast<double>(n_train * cfg.epochs) / report.wall_s : 0.0;
  return report;
}

RunReport train(const NetworkConfig& config, const Dataset& ds, const TrainConfig& cfg) {
  Model<float> model(config, cfg.seed);
  return train(model, ds, cfg);
}

}  // namespace hgformer
