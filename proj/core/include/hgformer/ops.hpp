#pragma once

#include <cstddef>
#include <vector>

#include "hgformer/tensor.hpp"

// Differentiable primitives. Every op validates shapes (DimensionError), checks
// its output for NaN/Inf (NumericalError) and records a backward rule on the
// active tape when any input requires a gradient. Broadcasting is limited to
// the explicit row-vector forms below.
namespace hgformer::ops {

// [m x k] . [k x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// [m x k] . [n x k]^T, used for attention logits.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// x[m x n] + b[n] on every row.
template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& b);

// x[m x n] * g[n] on every row.
template <typename T>
Tensor<T> mul_row(const Tensor<T>& x, const Tensor<T>& g);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> mean(const Tensor<T>& a);

// Column means: [m x n] -> [1 x n].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x);

// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

// Row-wise normalization over the last dimension, then gamma * xhat + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

// x * Phi(x), exact erf form.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Per-channel 3x3 correlation with zero padding 1. x: [C x H x W], kernel: [C x 3 x 3].
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel);

// Same correlation on token layout: x is [H*W x C] flattened row-major from the grid.
template <typename T>
Tensor<T> depthwise_conv2d_tokens(const Tensor<T>& x, std::size_t height, std::size_t width,
                                  const Tensor<T>& kernel);

// Row g of the result is the mean of x's rows listed in groups[g]; an empty
// group yields a zero row. x: [P x C] -> [G x C].
template <typename T>
Tensor<T> gather_mean(const Tensor<T>& x, const std::vector<std::vector<std::size_t>>& groups);

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

// Non-overlapping s x s patches of a token grid: [H*W x C] -> [(H/s)*(W/s) x s*s*C].
// Column order within a patch is (dy, dx, c).
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t height, std::size_t width, std::size_t stride);

// -log softmax(logits)[label]; logits of any shape are treated as a flat vector.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t label);

}  // namespace hgformer::ops
