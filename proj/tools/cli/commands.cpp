#include "commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "hgformer/ablation.hpp"
#include "hgformer/bench.hpp"
#include "hgformer/checkpoint.hpp"
#include "hgformer/dataset.hpp"
#include "hgformer/errors.hpp"
#include "hgformer/gradcheck.hpp"
#include "hgformer/hypergraph.hpp"
#include "hgformer/instrumentation.hpp"
#include "hgformer/model.hpp"
#include "hgformer/ops.hpp"
#include "hgformer/train.hpp"
#include "json.hpp"

namespace hgformer::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct TopologyArgs {
  std::string input = "synthetic";
  std::string grid = "8x8";
  std::size_t channels = 16;
  std::size_t ne = 8;
  std::size_t k = 16;
  std::string algo = "cs-knn";
  std::string distance = "dot";
  std::uint64_t seed = 0;
  std::string out;
};

struct ModelArgs {
  std::string variant = "Micro";
  std::string block = "hga";
  std::string algo = "cs-knn";
  std::string distance = "dot";

  NetworkConfig config(std::size_t n_classes) const {
    NetworkConfig c = variant_config(variant, n_classes);
    c.block = parse_block_kind(block);
    c.construction = parse_construction(algo);
    c.distance = parse_distance(distance);
    return c;
  }
};

struct ForwardArgs {
  ModelArgs model;
  std::string input = "synthetic";
  std::string checkpoint;
  std::size_t classes = 10;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;
  std::string out;
};

struct GradcheckArgs {
  std::string variant = "Micro";
  bool fp64 = true;
  std::size_t classes = 2;
  std::size_t image_size = 32;
  std::size_t batch = 2;
  double tolerance = 1e-4;
  double step = 1e-5;
  std::size_t directions = 1;
  std::size_t coordinates = 2;
  std::string inject_fault = "none";
  std::uint64_t seed = 0;
  bool omit_timing = false;
  std::string out;
};

struct DataArgs {
  std::size_t classes = 4;
  std::size_t samples_per_class = 100;
  std::size_t image_size = 32;
  double background = 0.5;
  double noise = 0.1;
  double outliers = 0.0;
  bool noisy = false;

  Dataset make(std::uint64_t seed) const {
    ToyDatasetSpec spec = noisy ? noisy_toy_spec(seed) : ToyDatasetSpec{};
    spec.n_classes = classes;
    spec.samples_per_class = samples_per_class;
    spec.image_size = image_size;
    if (!noisy) {
      spec.noise_std = noise;
      spec.outlier_fraction = outliers;
    }
    spec.background = background;
    spec.seed = seed;
    return make_toy_dataset(spec);
  }
};

struct TrainArgs {
  ModelArgs model;
  DataArgs data;
  TrainConfig train;
  std::string out = "hgformer_out";
  bool omit_timing = false;
};

struct AblateArgs {
  ModelArgs model;
  DataArgs data;
  TrainConfig train;
  std::string arms = "architecture";
  std::size_t seeds = 3;
  std::string out = "hgformer_out";
  bool omit_timing = false;
};

struct BenchArgs {
  BenchConfig bench;
  bool scaling = false;
  std::string out = "hgformer_out";
  bool omit_timing = false;
};

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << content;
  if (!f) throw ConfigError("failed writing " + path.string());
}

void emit_json(const json& j, const std::string& out_path, std::ostream& out) {
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty()) {
    out << text;
  } else {
    write_file(out_path, text);
  }
}

Grid parse_grid(const std::string& text) {
  unsigned long h = 0, w = 0;
  char x = 0;
  std::istringstream is(text);
  if (!(is >> h >> x >> w) || (x != 'x' && x != 'X') || !is.eof() || h == 0 || w == 0) {
    throw ConfigError("grid must look like HxW with positive sizes, got '" + text + "'");
  }
  return {h, w};
}

const NamedArray* find_entry(const std::vector<NamedArray>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::vector<NamedArray> read_tensor_file(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("input file '" + path + "' does not exist");
  return load_checkpoint(path);
}

TokenSet<double> topology_tokens(const TopologyArgs& a) {
  TokenSet<double> tokens;
  if (a.input == "synthetic") {
    tokens.grid = parse_grid(a.grid);
    if (a.channels == 0) throw ConfigError("--channels must be positive");
    std::mt19937_64 rng(a.seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(tokens.grid.size() * a.channels);
    for (auto& x : v) x = d(rng);
    tokens.nodes = Tensor<double>({tokens.grid.size(), a.channels}, std::move(v));
  } else {
    const auto entries = read_tensor_file(a.input);
    const NamedArray* in = find_entry(entries, "input");
    if (in == nullptr) throw ConfigError("input file has no entry named 'input'");
    std::vector<double> v(in->data.begin(), in->data.end());
    if (in->shape.size() == 3) {
      tokens.grid = {in->shape[0], in->shape[1]};
      tokens.nodes = Tensor<double>({in->shape[0] * in->shape[1], in->shape[2]}, std::move(v));
    } else if (in->shape.size() == 2) {
      tokens.grid = {1, in->shape[0]};
      tokens.nodes = Tensor<double>({in->shape[0], in->shape[1]}, std::move(v));
    } else {
      throw ConfigError("'input' must be [H, W, C] or [N, C], got " + shape_to_string(in->shape));
    }
    if (const NamedArray* cls = find_entry(entries, "class_token")) {
      if (cls->data.size() != tokens.channels()) {
        throw ConfigError("'class_token' must hold " + std::to_string(tokens.channels()) + " values");
      }
      tokens.class_token = Tensor<double>({1, tokens.channels()}, std::vector<double>(cls->data.begin(), cls->data.end()));
    }
  }
  if (tokens.n_nodes() == 0 || tokens.channels() == 0) throw ConfigError("input holds no tokens");
  if (!tokens.class_token.defined()) tokens.class_token = ops::mean_rows(tokens.nodes);
  return tokens;
}

int cmd_topology(const TopologyArgs& a, std::ostream& out) {
  const TokenSet<double> tokens = topology_tokens(a);
  const ConstructionAlgo algo = parse_construction(a.algo);
  const DistanceFn distance = parse_distance(a.distance);
  TopologyDump dump;
  dump.grid = tokens.grid;
  dump.incidence = baseline_construct(tokens, algo, a.ne, a.k, a.seed, distance);
  const Tensor<double> scores = score_tokens(tokens);
  dump.scores.assign(scores.data().begin(), scores.data().end());
  const std::string text = json::parse(dump.to_json()).dump(2) + "\n";
  if (a.out.empty()) {
    out << text;
  } else {
    write_file(a.out, text);
  }
  return kExitOk;
}

int cmd_forward(const ForwardArgs& a, std::ostream& out) {
  const NetworkConfig config = a.model.config(a.classes);
  Model<float> model(config, a.seed);
  if (!a.checkpoint.empty()) model.load_state(read_tensor_file(a.checkpoint));
  Tensor<float> image;
  if (a.input == "synthetic") {
    std::mt19937_64 rng(a.seed + 1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<float> px(config.in_channels * a.image_size * a.image_size);
    for (auto& x : px) x = static_cast<float>(u(rng));
    image = Tensor<float>({config.in_channels, a.image_size, a.image_size}, std::move(px));
  } else {
    const auto entries = read_tensor_file(a.input);
    const NamedArray* in = find_entry(entries, "input");
    if (in == nullptr) throw ConfigError("input file has no entry named 'input'");
    image = from_named_array<float>(*in);
  }
  std::vector<TopologyRecord> topologies;
  ForwardOptions opts;
  opts.topologies = &topologies;
  const Tensor<float> logits = network_forward(image, model, opts);
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.numel(); ++i)
    if (logits[i] > logits[best]) best = i;
  json j;
  j["variant"] = config.variant;
  j["block"] = to_string(config.block);
  j["param_count"] = model.parameter_count();
  j["predicted"] = best;
  j["logits"] = std::vector<float>(logits.data().begin(), logits.data().end());
  auto& tj = j["hypergraphs"] = json::array();
  for (const auto& t : topologies) {
    tj.push_back({{"stage", t.stage + 1},
                  {"block", t.block + 1},
                  {"grid", {t.grid.height, t.grid.width}},
                  {"n_edges", t.incidence.n_edges()},
                  {"k", t.incidence.k()},
                  {"centers", t.incidence.centers}});
  }
  emit_json(j, a.out, out);
  return kExitOk;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  if (!a.fp64) throw ConfigError("finite-difference checks are only meaningful in fp64");
  GradCheckOptions o;
  o.variant = a.variant;
  o.n_classes = a.classes;
  o.image_size = a.image_size;
  o.batch = a.batch;
  o.seed = a.seed;
  o.step = a.step;
  o.tolerance = a.tolerance;
  o.directions = a.directions;
  o.coordinates = a.coordinates;
  const FaultSite fault = parse_fault_site(a.inject_fault);
  set_fault(fault);
  GradCheckReport report;
  try {
    report = grad_check_suite(o);
  } catch (...) {
    set_fault(FaultSite::none);
    throw;
  }
  set_fault(FaultSite::none);
  emit_json(report.to_json(o.tolerance, !a.omit_timing), a.out, out);
  if (!report.passed) {
    err << "gradient check failed for:";
    for (const auto& name : report.failures()) err << ' ' << name;
    err << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_train(TrainArgs a, std::ostream& out) {
  const Dataset ds = a.data.make(a.train.seed);
  const NetworkConfig config = a.model.config(ds.n_classes);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  a.train.checkpoint_path = dir / "best.ckpt";
  const RunReport report = train(config, ds, a.train);
  json j = report.to_json(!a.omit_timing);
  write_file(dir / "run_report.json", j.dump(2) + "\n");
  out << "final_acc " << report.final_acc << " best_val_acc " << report.best_val_acc << " (epoch "
      << report.best_epoch << ")\n";
  return kExitOk;
}

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const Dataset ds = a.data.make(a.train.seed);
  const NetworkConfig base = a.model.config(ds.n_classes);
  const auto arms = ablation_arms(a.arms, base);
  const AblationResult result = run_ablation(arms, ds, a.train, a.seeds, [&](const ArmRun& r) {
    out << r.arm << " seed " << r.seed << " final_acc " << r.final_acc << '\n';
  });
  const fs::path dir(a.out);
  write_file(dir / "ablation.csv", result.csv(!a.omit_timing));
  json summary;
  summary["family"] = a.arms;
  summary["seeds"] = a.seeds;
  summary["arms"] = result.to_json();
  write_file(dir / "ablation_summary.json", summary.dump(2) + "\n");
  for (const auto& s : result.summary) out << s.arm << " mean " << s.mean_acc << " std " << s.std_acc << '\n';
  return kExitOk;
}

json scaling_json() {
  json j;
  auto sweep = [&](const char* axis, const std::vector<std::size_t>& values, auto make) {
    std::vector<double> xs, ys;
    json points = json::array();
    for (std::size_t v : values) {
      const ScalingPoint p = make(v);
      xs.push_back(static_cast<double>(v));
      ys.push_back(static_cast<double>(p.stats.flops_of(OpCategory::messaging)));
      points.push_back({{"n_nodes", p.n_nodes},
                        {"channels", p.channels},
                        {"n_edges", p.n_edges},
                        {"k", p.k},
                        {"messaging_macs", p.stats.flops_of(OpCategory::messaging)},
                        {"construction_macs", p.stats.flops_of(OpCategory::construction)}});
    }
    const LinearFit fit = fit_linear(xs, ys);
    j[axis] = {{"points", points},
               {"slope", fit.slope},
               {"intercept", fit.intercept},
               {"max_rel_residual", fit.max_rel_residual}};
  };
  sweep("n_nodes", {64, 128, 256, 512}, [](std::size_t n) { return measure_block(n, 32, 16, 16); });
  sweep("channels", {16, 32, 64, 128}, [](std::size_t c) { return measure_block(256, c, 16, 16); });
  sweep("n_edges", {8, 16, 32, 64}, [](std::size_t ne) { return measure_block(256, 32, ne, 16); });
  return j;
}

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  const BenchReport report = bench_throughput(a.bench);
  json j = report.to_json(!a.omit_timing);
  if (a.scaling) j["scaling"] = scaling_json();
  const fs::path dir(a.out);
  write_file(dir / "bench.json", j.dump(2) + "\n");
  if (!a.omit_timing) out << "images/s " << report.images_per_s << '\n';
  return kExitOk;
}

void add_model_options(CLI::App* sub, ModelArgs& m) {
  sub->add_option("--variant", m.variant, "Model variant: T, S, B, Micro")->capture_default_str();
  sub->add_option("--block", m.block, "Block kind: hga, vanilla, single-stage")->capture_default_str();
  sub->add_option("--algo", m.algo, "Hypergraph construction: cs-knn, knn, kmeans, dpc-knn")->capture_default_str();
  sub->add_option("--distance", m.distance, "Neighbor distance: dot, cosine, euclidean, softmax")
      ->capture_default_str();
}

void add_data_options(CLI::App* sub, DataArgs& d) {
  sub->add_option("--classes", d.classes, "Toy dataset classes")->capture_default_str();
  sub->add_option("--samples-per-class", d.samples_per_class, "Toy dataset samples per class")->capture_default_str();
  sub->add_option("--image-size", d.image_size, "Toy image side length")->capture_default_str();
  sub->add_option("--background", d.background, "Background level under the noise")->capture_default_str();
  sub->add_option("--noise", d.noise, "Background noise standard deviation")->capture_default_str();
  sub->add_option("--outliers", d.outliers, "Fraction of pixels replaced by outliers")->capture_default_str();
  sub->add_flag("--noisy", d.noisy, "Use the noise-augmented toy dataset (overrides --noise/--outliers)");
}

void add_train_options(CLI::App* sub, TrainConfig& t) {
  sub->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str();
  sub->add_option("--batch", t.batch_size, "Batch size")->capture_default_str();
  sub->add_option("--lr", t.lr, "Peak learning rate")->capture_default_str();
  sub->add_option("--weight-decay", t.weight_decay, "Decoupled weight decay")->capture_default_str();
  sub->add_option("--warmup", t.warmup_epochs, "Linear warmup epochs")->capture_default_str();
  sub->add_option("--grad-clip", t.grad_clip, "Global gradient-norm clip (0 disables)")->capture_default_str();
  sub->add_option("--threads", t.threads, "Worker cap (0 = HGF_THREADS or all cores)")->capture_default_str();
  sub->add_option("--seed", t.seed, "Seed for data, initialization and batch order")->capture_default_str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"HGFormer hypergraph vision transformer toolkit", "hgformer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "hgformer 0.1.0");

  TopologyArgs topo;
  auto* s_topo = app.add_subcommand("topology", "Build one hypergraph and write it as JSON");
  s_topo->add_option("--input", topo.input, "Tensor file with entry 'input' ([H,W,C] or [N,C]), or 'synthetic'")
      ->capture_default_str();
  s_topo->add_option("--grid", topo.grid, "Synthetic token grid HxW")->capture_default_str();
  s_topo->add_option("--channels", topo.channels, "Synthetic token channels")->capture_default_str();
  s_topo->add_option("--ne", topo.ne, "Number of hyperedges")->capture_default_str();
  s_topo->add_option("--k", topo.k, "Nodes per hyperedge")->capture_default_str();
  s_topo->add_option("--algo", topo.algo, "cs-knn, knn, kmeans, dpc-knn")->capture_default_str();
  s_topo->add_option("--distance", topo.distance, "dot, cosine, euclidean, softmax")->capture_default_str();
  s_topo->add_option("--seed", topo.seed, "Seed for synthetic tokens and k-means")->capture_default_str();
  s_topo->add_option("--out", topo.out, "Output JSON path (default: stdout)");

  ForwardArgs fwd;
  auto* s_fwd = app.add_subcommand("forward", "Run one image through a freshly seeded or loaded model");
  add_model_options(s_fwd, fwd.model);
  s_fwd->add_option("--input", fwd.input, "Tensor file with entry 'input' [3,H,W], or 'synthetic'")
      ->capture_default_str();
  s_fwd->add_option("--checkpoint", fwd.checkpoint, "Parameter checkpoint to load");
  s_fwd->add_option("--classes", fwd.classes, "Number of classes")->capture_default_str();
  s_fwd->add_option("--image-size", fwd.image_size, "Synthetic image side length")->capture_default_str();
  s_fwd->add_option("--seed", fwd.seed, "Seed for initialization and synthetic input")->capture_default_str();
  s_fwd->add_option("--out", fwd.out, "Output JSON path (default: stdout)");

  GradcheckArgs gc;
  auto* s_gc = app.add_subcommand("gradcheck", "Compare tape gradients with central finite differences");
  s_gc->add_option("--variant", gc.variant, "Model variant: T, S, B, Micro")->capture_default_str();
  s_gc->add_flag("--fp64,!--no-fp64", gc.fp64, "Run in double precision (required)");
  s_gc->add_option("--classes", gc.classes, "Number of classes")->capture_default_str();
  s_gc->add_option("--image-size", gc.image_size, "Input side length")->capture_default_str();
  s_gc->add_option("--batch", gc.batch, "Images in the fixed random batch")->capture_default_str();
  s_gc->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();
  s_gc->add_option("--step", gc.step, "Finite-difference step")->capture_default_str();
  s_gc->add_option("--directions", gc.directions, "Random directions per parameter tensor")->capture_default_str();
  s_gc->add_option("--coordinates", gc.coordinates, "Single coordinates per parameter tensor")->capture_default_str();
  s_gc->add_option("--inject-fault", gc.inject_fault, "Corrupt a backward rule: none, gelu, matmul, softmax, layer_norm")
      ->capture_default_str();
  s_gc->add_option("--seed", gc.seed, "Seed for initialization, batch and probes")->capture_default_str();
  s_gc->add_flag("--omit-timing", gc.omit_timing, "Write timing fields as 0");
  s_gc->add_option("--out", gc.out, "Output JSON path (default: stdout)");

  TrainArgs tr;
  auto* s_tr = app.add_subcommand("train", "Train on the toy dataset; writes run_report.json and best.ckpt");
  add_model_options(s_tr, tr.model);
  add_data_options(s_tr, tr.data);
  add_train_options(s_tr, tr.train);
  s_tr->add_option("--out", tr.out, "Output directory")->capture_default_str();
  s_tr->add_flag("--omit-timing", tr.omit_timing, "Write timing fields as 0");

  AblateArgs ab;
  auto* s_ab = app.add_subcommand("ablate", "Train every arm of an ablation; writes ablation.csv and ablation_summary.json");
  add_model_options(s_ab, ab.model);
  add_data_options(s_ab, ab.data);
  add_train_options(s_ab, ab.train);
  s_ab->add_option("--arms", ab.arms, "Ablation family: construction, distance, architecture")->capture_default_str();
  s_ab->add_option("--seeds", ab.seeds, "Seeds per arm")->capture_default_str();
  s_ab->add_option("--out", ab.out, "Output directory")->capture_default_str();
  s_ab->add_flag("--omit-timing", ab.omit_timing, "Write timing fields as 0");

  BenchArgs bn;
  bn.bench.image_size = 224;
  bn.bench.warmup_iters = 1;
  bn.bench.timed_iters = 3;
  auto* s_bn = app.add_subcommand("bench", "Measure eval throughput and per-category op counters; writes bench.json");
  s_bn->add_option("--variant", bn.bench.variant, "Model variant: T, S, B, Micro")->capture_default_str();
  s_bn->add_option("--image-size", bn.bench.image_size, "Input side length")->capture_default_str();
  s_bn->add_option("--batch", bn.bench.batch, "Images per timed iteration")->capture_default_str();
  s_bn->add_option("--warmup", bn.bench.warmup_iters, "Untimed iterations")->capture_default_str();
  s_bn->add_option("--iters", bn.bench.timed_iters, "Timed iterations")->capture_default_str();
  s_bn->add_option("--classes", bn.bench.n_classes, "Number of classes")->capture_default_str();
  s_bn->add_option("--seed", bn.bench.seed, "Seed for initialization and inputs")->capture_default_str();
  s_bn->add_flag("--scaling", bn.scaling, "Add messaging op-count sweeps over N, C and Ne");
  s_bn->add_option("--out", bn.out, "Output directory")->capture_default_str();
  s_bn->add_flag("--omit-timing", bn.omit_timing, "Write timing fields as 0");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*s_topo) return cmd_topology(topo, out);
    if (*s_fwd) return cmd_forward(fwd, out);
    if (*s_gc) return cmd_gradcheck(gc, out, err);
    if (*s_tr) return cmd_train(tr, out);
    if (*s_ab) return cmd_ablate(ab, out);
    if (*s_bn) return cmd_bench(bn, out);
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace hgformer::cli
