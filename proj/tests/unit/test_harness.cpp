#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>

#include "hgformer/ablation.hpp"
#include "hgformer/bench.hpp"
#include "hgformer/checkpoint.hpp"
#include "hgformer/dataset.hpp"
#include "hgformer/errors.hpp"
#include "hgformer/gradcheck.hpp"
#include "hgformer/instrumentation.hpp"
#include "hgformer/train.hpp"

using namespace hgformer;

namespace {

ToyDatasetSpec small_spec(std::size_t per_class, std::uint64_t seed = 0) {
  ToyDatasetSpec s;
  s.samples_per_class = per_class;
  s.seed = seed;
  return s;
}

TrainConfig quick_train(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 16;
  t.warmup_epochs = 1;
  t.threads = 1;
  return t;
}

// Independent nearest-template classifier: for each class, paint its shape in its
// color over a flat canvas at every position and keep the smallest squared distance.
std::size_t nearest_template(const Example& ex, const ToyDatasetSpec& spec) {
  const std::size_t size = spec.image_size, shape = spec.shape_size, hw = size * size;
  const double bg = spec.background;
  const double colors[3][3] = {{1, 0, 0}, {0, 0, 1}, {0, 1, 0}};  // red, blue, green
  double base = 0.0;  // distance to the empty canvas
  for (float p : ex.pixels) base += (p - bg) * (p - bg);
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_class = 0;
  for (std::size_t cls = 0; cls < spec.n_classes; ++cls) {
    const double* color = colors[(cls / 2) % 3];
    for (std::size_t y0 = 0; y0 + shape <= size; ++y0) {
      for (std::size_t x0 = 0; x0 + shape <= size; ++x0) {
        double d = base;
        for (std::size_t dy = 0; dy < shape; ++dy) {
          for (std::size_t dx = 0; dx < shape; ++dx) {
            const bool on = cls % 2 == 0 || dy == shape / 2 - 1 || dy == shape / 2 || dx == shape / 2 - 1 ||
                            dx == shape / 2;
            if (!on) continue;
            for (std::size_t c = 0; c < 3; ++c) {
              const double x = ex.pixels[c * hw + (y0 + dy) * size + (x0 + dx)];
              d += (x - color[c]) * (x - color[c]) - (x - bg) * (x - bg);
            }
          }
        }
        if (d < best) best = d, best_class = cls;
      }
    }
  }
  return best_class;
}

}  // namespace

TEST(Dataset, SplitSizes) {
  const Dataset ds = make_toy_dataset(ToyDatasetSpec{});
  EXPECT_EQ(ds.train.size(), 320u);
  EXPECT_EQ(ds.val.size(), 80u);
  std::vector<std::size_t> per_class(4, 0);
  for (const auto& e : ds.val) ++per_class[e.label];
  EXPECT_EQ(per_class, (std::vector<std::size_t>{20, 20, 20, 20}));
}

TEST(Dataset, SeededBytesAreIdentical) {
  const Dataset a = make_toy_dataset(small_spec(20, 5));
  const Dataset b = make_toy_dataset(small_spec(20, 5));
  const Dataset c = make_toy_dataset(small_spec(20, 6));
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].pixels, b.train[i].pixels);
    EXPECT_EQ(a.train[i].label, b.train[i].label);
  }
  EXPECT_NE(a.train[0].pixels, c.train[0].pixels);
}

TEST(Dataset, NoiselessClassesAreTemplateSeparable) {
  ToyDatasetSpec spec;
  spec.noise_std = 0.0;
  spec.n_classes = 6;
  spec.samples_per_class = 25;
  const Dataset ds = make_toy_dataset(spec);
  std::size_t hits = 0;
  for (const auto& ex : ds.val) hits += nearest_template(ex, spec) == ex.label;
  EXPECT_EQ(hits, ds.val.size());
}

TEST(Dataset, EmptySpecIsConfigError) {
  EXPECT_THROW(make_toy_dataset(small_spec(0)), ConfigError);
  ToyDatasetSpec s;
  s.n_classes = 0;
  EXPECT_THROW(make_toy_dataset(s), ConfigError);
}

TEST(Dataset, FlipMirrorsColumns) {
  const Dataset ds = make_toy_dataset(small_spec(5));
  const auto a = example_image<float>(ds, ds.train[0], false);
  const auto b = example_image<float>(ds, ds.train[0], true);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) EXPECT_EQ(a[(c * 32 + y) * 32 + x], b[(c * 32 + y) * 32 + 31 - x]);
}

TEST(Schedule, WarmupThenCosine) {
  TrainConfig cfg;
  cfg.lr = 1.0;
  EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 0, 100, 10), 0.1);
  EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 9, 100, 10), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 10, 100, 10), 1.0);
  EXPECT_NEAR(scheduled_lr(cfg, 55, 100, 10), 0.5, 1e-12);
  EXPECT_NEAR(scheduled_lr(cfg, 100, 100, 10), 0.0, 1e-12);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const Dataset ds = make_toy_dataset(small_spec(10));
  Model<float> model(variant_config("Micro", 4), 3);
  const auto before = model.state();
  TrainConfig cfg = quick_train(2);
  cfg.lr = 0.0;
  cfg.flip = false;
  const RunReport r = train(model, ds, cfg);
  const auto after = model.state();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].data, after[i].data) << before[i].name;
  EXPECT_NEAR(r.epochs[0].train_loss, r.epochs[1].train_loss, 1e-5);
}

TEST(Train, OverfitsFourSamples) {
  ToyDatasetSpec spec = small_spec(1, 2);
  const Dataset ds = make_toy_dataset(spec);
  ASSERT_EQ(ds.train.size(), 4u);
  TrainConfig cfg = quick_train(200);
  cfg.batch_size = 4;
  cfg.lr = 2e-3;
  cfg.weight_decay = 0.0;
  cfg.warmup_epochs = 10;
  cfg.flip = false;
  Model<float> model(variant_config("Micro", 4), 0);
  const RunReport r = train(model, ds, cfg);
  EXPECT_EQ(r.epochs.back().train_acc, 1.0);
  EXPECT_EQ(evaluate(model, ds, ds.train), 1.0);
}

TEST(Train, SeededRunsAreIdenticalAcrossThreadCounts) {
  const Dataset ds = make_toy_dataset(small_spec(10, 1));
  TrainConfig cfg = quick_train(2);
  cfg.seed = 9;
  const RunReport a = train(variant_config("Micro", 4), ds, cfg);
  cfg.threads = 3;
  const RunReport b = train(variant_config("Micro", 4), ds, cfg);
  EXPECT_EQ(a.to_json(false).dump(), b.to_json(false).dump());
  EXPECT_EQ(a.final_acc, b.final_acc);
}

TEST(Train, LossDecreasesOverTenEpochs) {
  const Dataset ds = make_toy_dataset(ToyDatasetSpec{});
  TrainConfig cfg;
  cfg.epochs = 10;
  const RunReport r = train(variant_config("Micro", 4), ds, cfg);
  ASSERT_EQ(r.epochs.size(), 10u);
  EXPECT_LT(r.epochs.back().train_loss, r.epochs.front().train_loss);
  for (std::size_t i = 0; i < r.epochs.size(); ++i) EXPECT_EQ(r.epochs[i].epoch, i + 1);
}

TEST(Train, ReportAndCheckpoint) {
  const Dataset ds = make_toy_dataset(small_spec(5));
  TrainConfig cfg = quick_train(2);
  cfg.checkpoint_path = std::filesystem::temp_directory_path() / "hgf_train_best.ckpt";
  std::filesystem::remove(cfg.checkpoint_path);
  const RunReport r = train(variant_config("Micro", 4), ds, cfg);
  EXPECT_TRUE(std::filesystem::exists(cfg.checkpoint_path));
  Model<float> reloaded(variant_config("Micro", 4), 77);
  EXPECT_NO_THROW(reloaded.load_state(load_checkpoint(cfg.checkpoint_path)));
  std::filesystem::remove(cfg.checkpoint_path);
  const auto j = r.to_json(false);
  EXPECT_EQ(j["wall_s"], 0.0);
  EXPECT_EQ(j["images_per_s"], 0.0);
  EXPECT_EQ(j["config_hash"].get<std::string>().size(), 16u);
  EXPECT_GE(r.final_acc, 0.0);
  EXPECT_LE(r.final_acc, 1.0);
  EXPECT_EQ(r.param_count, count_parameters(variant_config("Micro", 4)));
}

TEST(Train, DivergenceRaisesWithDiagnostics) {
  const Dataset ds = make_toy_dataset(small_spec(5));
  TrainConfig cfg = quick_train(20);
  cfg.lr = 1e30;
  cfg.warmup_epochs = 0;
  try {
    train(variant_config("Micro", 4), ds, cfg);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("lr"), std::string::npos) << e.what();
  }
}

TEST(Train, GradientClipOnlyActsAboveThreshold) {
  const Dataset ds = make_toy_dataset(small_spec(5));
  TrainConfig cfg = quick_train(2);
  cfg.grad_clip = 0.0;
  const RunReport off = train(variant_config("Micro", 4), ds, cfg);
  cfg.grad_clip = 1e30;
  const RunReport loose = train(variant_config("Micro", 4), ds, cfg);
  cfg.grad_clip = 1e-3;
  const RunReport tight = train(variant_config("Micro", 4), ds, cfg);
  for (std::size_t e = 0; e < off.epochs.size(); ++e)
    EXPECT_EQ(off.epochs[e].train_loss, loose.epochs[e].train_loss);
  EXPECT_NE(off.epochs.back().train_loss, tight.epochs.back().train_loss);
  cfg.grad_clip = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, ConfigHashDependsOnSettings) {
  const auto net = variant_config("Micro", 4);
  TrainConfig a, b;
  b.lr = 2e-3;
  EXPECT_EQ(config_hash(net, a), config_hash(net, a));
  EXPECT_NE(config_hash(net, a), config_hash(net, b));
}

TEST(Train, ThreadResolutionHonoursEnvironment) {
  ::setenv("HGF_THREADS", "3", 1);
  EXPECT_EQ(resolve_threads(0), 3u);
  EXPECT_EQ(resolve_threads(2), 2u);
  ::unsetenv("HGF_THREADS");
}

TEST(Ablation, ArmsDifferOnlyInTheFactorUnderTest) {
  const auto base = variant_config("Micro", 4);
  const std::pair<const char*, const char*> families[] = {
      {"construction", "construction"}, {"distance", "distance"}, {"architecture", "block"}};
  for (const auto& [family, field] : families) {
    const auto arms = ablation_arms(family, base);
    EXPECT_EQ(arms.size(), std::string(family) == "architecture" ? 3u : 4u);
    for (std::size_t i = 0; i < arms.size(); ++i) {
      const auto diff = config_differences(base, arms[i].model);
      if (i == 0) {
        EXPECT_TRUE(diff.empty()) << family;
      } else {
        EXPECT_EQ(diff, std::vector<std::string>{field}) << family << " arm " << arms[i].name;
      }
    }
  }
  EXPECT_THROW(ablation_arms("depth", base), ConfigError);
}

TEST(Ablation, IdenticalArmsAgreeAndTableHasOneRowPerRun) {
  const Dataset ds = make_toy_dataset(small_spec(5));
  const auto base = variant_config("Micro", 4);
  const std::vector<AblationArm> arms = {{"a", base}, {"b", base}};
  const AblationResult r = run_ablation(arms, ds, quick_train(1), 2);
  ASSERT_EQ(r.summary.size(), 2u);
  EXPECT_EQ(r.runs.size(), 4u);
  EXPECT_EQ(r.arm("a").mean_acc, r.arm("b").mean_acc);
  EXPECT_EQ(r.arm("a").std_acc, r.arm("b").std_acc);
  EXPECT_GE(r.arm("a").std_acc, 0.0);
  const std::string csv = r.csv(false);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "arm,seed,final_acc,wall_s");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), 5u);
  EXPECT_THROW(run_ablation({arms[0]}, ds, quick_train(1), 1), ConfigError);
}

TEST(GradCheck, MicroPassesAndCoversEveryParameter) {
  const GradCheckReport r = grad_check_suite(GradCheckOptions{});
  EXPECT_TRUE(r.passed) << "max rel err " << r.max_rel_err;
  EXPECT_LT(r.max_rel_err, 1e-4);
  const Model<double> m(variant_config("Micro", 2), 0);
  EXPECT_EQ(r.params.size(), m.parameters().size());
  EXPECT_EQ(r.params_total, m.parameters().size());
  for (std::size_t i = 0; i < r.params.size(); ++i) {
    EXPECT_EQ(r.params[i].name, m.parameters()[i].name);
    EXPECT_GE(r.params[i].probes, 2u);
  }
}

TEST(GradCheck, CorruptedBackwardRuleIsDetected) {
  for (auto site : {FaultSite::gelu_backward, FaultSite::matmul_backward, FaultSite::softmax_backward,
                    FaultSite::layer_norm_backward}) {
    set_fault(site);
    GradCheckOptions o;
    o.batch = 1;
    const GradCheckReport r = grad_check_suite(o);
    set_fault(FaultSite::none);
    EXPECT_FALSE(r.passed);
    EXPECT_FALSE(r.failures().empty());
  }
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.1, 1e-8), (1.1 - 1.0) / 1.1);
  EXPECT_DOUBLE_EQ(relative_error(1e-12, 3e-12, 1e-8), 2e-12);
}

TEST(Bench, BatchSizeKeepsPerImageTimeInBand) {
  BenchConfig c;
  c.timed_iters = 3;
  c.warmup_iters = 1;
  c.batch = 1;
  const BenchReport one = bench_throughput(c);
  c.batch = 4;
  const BenchReport four = bench_throughput(c);
  const double per_one = one.median_batch_s;
  const double per_four = four.median_batch_s / 4.0;
  EXPECT_GT(one.images_per_s, 0.0);
  EXPECT_LT(per_four, 4.0 * per_one);
  EXPECT_LT(per_one, 4.0 * per_four);
  EXPECT_EQ(one.per_image.flops, four.per_image.flops);
  EXPECT_GT(one.per_image.flops_of(OpCategory::construction), 0u);
  EXPECT_GT(one.per_image.flops_of(OpCategory::messaging), 0u);
}

TEST(Bench, MessagingCountIsLinearInEachSize) {
  auto messaging = [](const ScalingPoint& p) { return static_cast<double>(p.stats.flops_of(OpCategory::messaging)); };
  std::vector<double> x, y;
  for (std::size_t n : {64, 128, 256, 512}) {
    x.push_back(static_cast<double>(n));
    y.push_back(messaging(measure_block(n, 32, 16, 16)));
  }
  EXPECT_LT(fit_linear(x, y).max_rel_residual, 0.10);
  x.clear(), y.clear();
  for (std::size_t c : {16, 32, 64, 128}) {
    x.push_back(static_cast<double>(c));
    y.push_back(messaging(measure_block(256, c, 16, 16)));
  }
  const LinearFit fc = fit_linear(x, y);
  EXPECT_LT(fc.max_rel_residual, 0.10);
  EXPECT_NEAR(y[1] / y[0], 2.0, 0.2);  // doubling C roughly doubles the count
  x.clear(), y.clear();
  for (std::size_t ne : {8, 16, 32, 64}) {
    x.push_back(static_cast<double>(ne));
    y.push_back(messaging(measure_block(256, 32, ne, 16)));
  }
  EXPECT_LT(fit_linear(x, y).max_rel_residual, 0.10);
}

TEST(Bench, ConstructionScalesWithNodesTimesEdges) {
  std::vector<double> x, y;
  const std::pair<std::size_t, std::size_t> sizes[] = {{64, 8}, {128, 8}, {128, 16}, {256, 16}, {256, 32}};
  for (const auto& [n, ne] : sizes) {
    x.push_back(static_cast<double>(n * ne));
    y.push_back(static_cast<double>(measure_block(n, 32, ne, 16).stats.flops_of(OpCategory::construction)));
  }
  EXPECT_LT(fit_linear(x, y).max_rel_residual, 0.15);
}

TEST(Bench, FitRecoversExactLine) {
  const LinearFit f = fit_linear({1, 2, 3, 4}, {3, 5, 7, 9});
  EXPECT_NEAR(f.slope, 2.0, 1e-12);
  EXPECT_NEAR(f.intercept, 1.0, 1e-12);
  EXPECT_NEAR(f.max_rel_residual, 0.0, 1e-12);
  EXPECT_THROW(fit_linear({1}, {1}), ConfigError);
}
