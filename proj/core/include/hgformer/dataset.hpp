#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "hgformer/tensor.hpp"

namespace hgformer {

// Class c draws shape (c % 2: filled square or plus sign) in color (c / 2 % 3:
// red, blue, green) at a random position over a background of constant level
// `background` plus Gaussian noise.
// outlier_fraction replaces that share of pixel values with uniform draws in
// [-1, 2] to stress distance-based grouping.
struct ToyDatasetSpec {
  std::size_t n_classes = 4;
  std::size_t samples_per_class = 100;
  std::size_t image_size = 32;
  std::size_t shape_size = 8;
  double background = 0.5;
  double noise_std = 0.1;
  double outlier_fraction = 0.0;
  std::uint64_t seed = 0;
};

// The harder variant used for construction ablations.
ToyDatasetSpec noisy_toy_spec(std::uint64_t seed = 0);

struct Example {
  std::vector<float> pixels;  // [3 x H x W]
  std::size_t label = 0;
};

struct Dataset {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t n_classes = 0;
  std::vector<Example> train;
  std::vector<Example> val;
};

// 80/20 split within every class, seed-stable. Throws ConfigError for an
// empty or malformed spec.
Dataset make_toy_dataset(const ToyDatasetSpec& spec);

// [3 x H x W] tensor of an example, optionally mirrored left-right.
template <typename T>
Tensor<T> example_image(const Dataset& ds, const Example& ex, bool flip = false);

}  // namespace hgformer
