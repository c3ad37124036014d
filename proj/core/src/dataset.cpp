#include "hgformer/dataset.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <string>

#include "hgformer/errors.hpp"

namespace hgformer {
namespace {

constexpr std::array<std::array<float, 3>, 3> kColors{{{1.0f, 0.0f, 0.0f}, {0.0f, 0.0f, 1.0f}, {0.0f, 1.0f, 0.0f}}};

bool shape_covers(std::size_t shape, std::size_t dy, std::size_t dx, std::size_t size) {
  if (shape == 0) return true;  // filled square
  const std::size_t lo = size / 2 - 1, hi = size / 2;  // two-pixel thick plus
  return (dy >= lo && dy <= hi) || (dx >= lo && dx <= hi);
}

Example render(const ToyDatasetSpec& spec, std::size_t label, std::mt19937_64& rng) {
  const std::size_t s = spec.image_size, hw = s * s;
  Example ex;
  ex.label = label;
  ex.pixels.assign(3 * hw, static_cast<float>(spec.background));
  std::normal_distribution<double> noise(0.0, 1.0);
  if (spec.noise_std > 0.0) {
    for (auto& p : ex.pixels) p += static_cast<float>(spec.noise_std * noise(rng));
  }
  std::uniform_int_distribution<std::size_t> pos(0, s - spec.shape_size);
  const std::size_t y0 = pos(rng), x0 = pos(rng);
  const auto& color = kColors[(label / 2) % kColors.size()];
  for (std::size_t dy = 0; dy < spec.shape_size; ++dy) {
    for (std::size_t dx = 0; dx < spec.shape_size; ++dx) {
      if (!shape_covers(label % 2, dy, dx, spec.shape_size)) continue;
      const std::size_t idx = (y0 + dy) * s + (x0 + dx);
      for (std::size_t c = 0; c < 3; ++c) ex.pixels[c * hw + idx] += color[c] - static_cast<float>(spec.background);
    }
  }
  if (spec.outlier_fraction > 0.0) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_real_distribution<double> value(-1.0, 2.0);
    for (auto& p : ex.pixels)
      if (u01(rng) < spec.outlier_fraction) p = static_cast<float>(value(rng));
  }
  return ex;
}

}  // namespace

ToyDatasetSpec noisy_toy_spec(std::uint64_t seed) {
  ToyDatasetSpec spec;
  spec.noise_std = 0.35;
  spec.outlier_fraction = 0.05;
  spec.seed = seed;
  return spec;
}

Dataset make_toy_dataset(const ToyDatasetSpec& spec) {
  if (spec.n_classes == 0 || spec.samples_per_class == 0) {
    throw ConfigError("toy dataset: needs at least one class and one sample per class");
  }
  if (spec.n_classes > 2 * kColors.size()) {
    throw ConfigError("toy dataset: at most " + std::to_string(2 * kColors.size()) + " classes");
  }
  if (spec.shape_size < 2 || spec.shape_size > spec.image_size) {
    throw ConfigError("toy dataset: shape size must lie in [2, image_size]");
  }
  if (!(spec.noise_std >= 0.0) || !(spec.outlier_fraction >= 0.0 && spec.outlier_fraction <= 1.0)) {
    throw ConfigError("toy dataset: noise_std must be >= 0 and outlier_fraction in [0, 1]");
  }
  Dataset ds;
  ds.height = ds.width = spec.image_size;
  ds.n_classes = spec.n_classes;
  std::mt19937_64 rng(spec.seed);
  const std::size_t n_val = spec.samples_per_class / 5;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    std::vector<Example> cls;
    cls.reserve(spec.samples_per_class);
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) cls.push_back(render(spec, c, rng));
    std::shuffle(cls.begin(), cls.end(), rng);
    for (std::size_t i = 0; i < cls.size(); ++i) (i < n_val ? ds.val : ds.train).push_back(std::move(cls[i]));
  }
  return ds;
}

template <typename T>
Tensor<T> example_image(const Dataset& ds, const Example& ex, bool flip) {
  const std::size_t h = ds.height, w = ds.width;
  std::vector<T> data(ex.pixels.size());
  for (std::size_t c = 0; c < ds.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t src = (c * h + y) * w + (flip ? w - 1 - x : x);
        data[(c * h + y) * w + x] = static_cast<T>(ex.pixels[src]);
      }
  return Tensor<T>(Shape{ds.channels, h, w}, std::move(data));
}

template Tensor<float> example_image(const Dataset&, const Example&, bool);
template Tensor<double> example_image(const Dataset&, const Example&, bool);

}  // namespace hgformer
