#include "hgformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "hgformer/errors.hpp"
#include "hgformer/instrumentation.hpp"

namespace hgformer::ops {
namespace {

template <typename T>
using NodePtr = typename Tensor<T>::NodePtr;

template <typename T>
using Node = detail::Node<T>;

template <typename T>
using GradIn = std::span<const std::span<T>>;

// Corrupts a backward contribution when the matching fault is armed.
template <typename T>
T fault_factor(FaultSite site) {
  return active_fault() == site ? T(1.01) : T(1);
}

template <typename T>
void check_finite(const char* op, const std::vector<T>& data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw NumericalError(std::string(op) + ": non-finite output at flat index " + std::to_string(i));
    }
  }
}

// Wraps freshly computed values into a tensor and, when a tape is active and
// some input needs a gradient, records the backward rule built by make_fn.
template <typename T, typename MakeFn>
Tensor<T> emit(const char* op, Shape shape, std::vector<T> data, std::initializer_list<const Tensor<T>*> inputs,
               MakeFn&& make_fn) {
  check_finite(op, data);
  Tensor<T> out(std::move(shape), std::move(data));
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) return out;
  bool needs_grad = false;
  std::vector<NodePtr<T>> nodes;
  nodes.reserve(inputs.size());
  for (const Tensor<T>* in : inputs) {
    const auto& node = in->node();
    if (node->requires_grad) {
      if (node->tape != nullptr && node->tape != tape) {
        throw ContractError(std::string(op) + ": input was recorded on a different tape");
      }
      needs_grad = true;
    }
    nodes.push_back(node);
  }
  if (needs_grad) tape->record(std::move(nodes), out.node(), make_fn(out.node().get()));
  return out;
}

// Inner product with eight interleaved partial sums, so the compiler can keep
// the lanes in vector registers without reassociating.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  T acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void require_matrix(const char* op, const Tensor<T>& t) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_to_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

template <typename T>
std::size_t vector_length(const char* op, const Tensor<T>& v) {
  if (v.rank() == 1) return v.dim(0);
  if (v.rank() == 2 && v.dim(0) == 1) return v.dim(1);
  throw DimensionError(std::string(op) + ": expected a row vector, got shape " + shape_to_string(v.shape()));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) + " . " +
                         shape_to_string(b.shape()));
  }
  count_flops(static_cast<std::uint64_t>(m) * k * n);
  std::vector<T> c(m * n, T(0));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return emit<T>("matmul", {m, n}, std::move(c), {&a, &b}, [=, na = a.node(), nb = b.node()](const Node<T>*) {
    return [=](std::span<const T> gc, GradIn<T> gin) {
      const T f = fault_factor<T>(FaultSite::matmul_backward);
      const T* pa = na->data.data();
      const T* pb = nb->data.data();
      if (!gin[0].empty()) {
        T* ga = gin[0].data();
        for (std::size_t i = 0; i < m; ++i) {
          const T* grow = gc.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += f * dot(grow, pb + p * n, n);
        }
      }
      if (!gin[1].empty()) {
        T* gb = gin[1].data();
        for (std::size_t i = 0; i < m; ++i) {
          const T* grow = gc.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            T* gbrow = gb + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    };
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_to_string(a.shape()) + " . " +
                         shape_to_string(b.shape()) + "^T");
  }
  count_flops(static_cast<std::uint64_t>(m) * k * n);
  std::vector<T> c(m * n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * n + j] = dot(pa + i * k, pb + j * k, k);
    }
  }
  return emit<T>("matmul_nt", {m, n}, std::move(c), {&a, &b}, [=, na = a.node(), nb = b.node()](const Node<T>*) {
    return [=](std::span<const T> gc, GradIn<T> gin) {
      const T f = fault_factor<T>(FaultSite::matmul_backward);
      const T* pa = na->data.data();
      const T* pb = nb->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const T g = gc[i * n + j];
          if (g == T(0)) continue;
          if (!gin[0].empty()) {
            T* ga = gin[0].data() + i * k;
            for (std::size_t p = 0; p < k; ++p) ga[p] += f * g * pb[j * k + p];
          }
          if (!gin[1].empty()) {
            T* gb = gin[1].data() + j * k;
            for (std::size_t p = 0; p < k; ++p) gb[p] += g * pa[i * k + p];
          }
        }
      }
    };
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  return emit<T>("transpose", {n, m}, std::move(out), {&a}, [=](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gin[0][i * n + j] += g[j * m + i];
    };
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(a.shape()) + " as " + shape_to_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return emit<T>("reshape", std::move(shape), std::move(out), {&a}, [](const Node<T>*) {
    return [](std::span<const T> g, GradIn<T> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
    };
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return emit<T>("add", a.shape(), std::move(out), {&a, &b}, [](const Node<T>*) {
    return [](std::span<const T> g, GradIn<T> gin) {
      for (std::size_t k = 0; k < 2; ++k) {
        if (gin[k].empty()) continue;
        for (std::size_t i = 0; i < g.size(); ++i) gin[k][i] += g[i];
      }
    };
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return emit<T>("sub", a.shape(), std::move(out), {&a, &b}, [](const Node<T>*) {
    return [](std::span<const T> g, GradIn<T> gin) {
      if (!gin[0].empty())
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
      if (!gin[1].empty())
        for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] -= g[i];
    };
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return emit<T>("mul", a.shape(), std::move(out), {&a, &b}, [na = a.node(), nb = b.node()](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      if (!gin[0].empty())
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * nb->data[i];
      if (!gin[1].empty())
        for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * na->data[i];
    };
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return emit<T>("scale", a.shape(), std::move(out), {&a}, [=](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * factor;
    };
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& b) {
  require_matrix("add_row", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (vector_length("add_row", b) != n) {
    throw DimensionError("add_row: bias " + shape_to_string(b.shape()) + " does not match " +
                         shape_to_string(x.shape()));
  }
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + b[j];
  return emit<T>("add_row", x.shape(), std::move(out), {&x, &b}, [=](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      if (!gin[0].empty())
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
      if (!gin[1].empty())
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gin[1][j] += g[i * n + j];
    };
  });
}

template <typename T>
Tensor<T> mul_row(const Tensor<T>& x, const Tensor<T>& s) {
  require_matrix("mul_row", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (vector_length("mul_row", s) != n) {
    throw DimensionError("mul_row: scale " + shape_to_string(s.shape()) + " does not match " +
                         shape_to_string(x.shape()));
  }
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] * s[j];
  return emit<T>("mul_row", x.shape(), std::move(out), {&x, &s}, [=, nx = x.node(), ns = s.node()](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const T gij = g[i * n + j];
          if (!gin[0].empty()) gin[0][i * n + j] += gij * ns->data[j];
          if (!gin[1].empty()) gin[1][j] += gij * nx->data[i * n + j];
        }
      }
    };
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  return emit<T>("sum", {}, std::vector<T>{acc}, {&a}, [](const Node<T>*) {
    return [](std::span<const T> g, GradIn<T> gin) {
      for (auto& v : gin[0]) v += g[0];
    };
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw DimensionError("mean: empty tensor");
  T acc = T(0);
  for (T v : a.data()) acc += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  return emit<T>("mean", {}, std::vector<T>{acc * inv}, {&a}, [=](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      for (auto& v : gin[0]) v += g[0] * inv;
    };
  });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  require_matrix("mean_rows", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (m == 0) throw DimensionError("mean_rows: no rows");
  std::vector<T> out(n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x[i * n + j];
  const T inv = T(1) / static_cast<T>(m);
  for (auto& v : out) v *= inv;
  return emit<T>("mean_rows", {1, n}, std::move(out), {&x}, [=](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gin[0][i * n + j] += g[j] * inv;
    };
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_matrix("softmax_rows", x);
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> y(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.data().data() + i * n;
    T* out = y.data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = std::exp(row[j] - mx);
      total += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= total;
  }
  return emit<T>("softmax_rows", x.shape(), std::move(y), {&x}, [=](const Node<T>* out) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      const T f = fault_factor<T>(FaultSite::softmax_backward);
      for (std::size_t i = 0; i < m; ++i) {
        const T* yr = out->data.data() + i * n;
        const T* gr = g.data() + i * n;
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
        for (std::size_t j = 0; j < n; ++j) gin[0][i * n + j] += f * yr[j] * (gr[j] - dot);
      }
    };
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_matrix("layer_norm", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw DimensionError("layer_norm: rows are empty");
  if (vector_length("layer_norm", gamma) != n || vector_length("layer_norm", beta) != n) {
    throw DimensionError("layer_norm: affine parameters do not match " + shape_to_string(x.shape()));
  }
  std::vector<T> y(m * n), xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.data().data() + i * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * inv;
      y[i * n + j] = xhat[i * n + j] * gamma[j] + beta[j];
    }
  }
  return emit<T>("layer_norm", x.shape(), std::move(y), {&x, &gamma, &beta},
                 [=, xhat = std::move(xhat), inv_std = std::move(inv_std), ng = gamma.node()](const Node<T>*) {
                   return [=](std::span<const T> g, GradIn<T> gin) {
                     const T f = fault_factor<T>(FaultSite::layer_norm_backward);
                     const T inv_n = T(1) / static_cast<T>(n);
                     for (std::size_t i = 0; i < m; ++i) {
                       const T* gr = g.data() + i * n;
                       const T* xh = xhat.data() + i * n;
                       if (!gin[1].empty())
                         for (std::size_t j = 0; j < n; ++j) gin[1][j] += gr[j] * xh[j];
                       if (!gin[2].empty())
                         for (std::size_t j = 0; j < n; ++j) gin[2][j] += gr[j];
                       if (gin[0].empty()) continue;
                       T mean_d = T(0), mean_dx = T(0);
                       for (std::size_t j = 0; j < n; ++j) {
                         const T d = gr[j] * ng->data[j];
                         mean_d += d;
                         mean_dx += d * xh[j];
                       }
                       mean_d *= inv_n;
                       mean_dx *= inv_n;
                       for (std::size_t j = 0; j < n; ++j) {
                         const T d = gr[j] * ng->data[j];
                         gin[0][i * n + j] += f * inv_std[i] * (d - mean_d - xh[j] * mean_dx);
                       }
                     }
                   };
                 });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = x[i];
    y[i] = v * T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
  }
  return emit<T>("gelu", x.shape(), std::move(y), {&x}, [nx = x.node()](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      const T f = fault_factor<T>(FaultSite::gelu_backward);
      const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = nx->data[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        gin[0][i] += f * g[i] * (cdf + v * pdf);
      }
    };
  });
}

namespace {

// Shared 3x3 depthwise kernel over a grid addressed through (channel, position) strides.
struct GridLayout {
  std::size_t channels, height, width;
  std::size_t channel_stride, position_stride;
  std::size_t index(std::size_t c, std::size_t i, std::size_t j) const {
    return c * channel_stride + (i * width + j) * position_stride;
  }
};

template <typename T>
void check_kernel(const Tensor<T>& kernel, std::size_t channels) {
  if (kernel.rank() != 3 || kernel.dim(1) != 3 || kernel.dim(2) != 3) {
    throw ConfigError("depthwise_conv2d: kernel must be [C x 3 x 3], got " + shape_to_string(kernel.shape()));
  }
  if (kernel.dim(0) != channels) {
    throw DimensionError("depthwise_conv2d: kernel has " + std::to_string(kernel.dim(0)) + " channels, input has " +
                         std::to_string(channels));
  }
}

template <typename T>
Tensor<T> depthwise_impl(const char* op, const Tensor<T>& x, const Tensor<T>& kernel, const GridLayout& lay) {
  const std::size_t C = lay.channels, H = lay.height, W = lay.width;
  count_flops(static_cast<std::uint64_t>(C) * H * W * 9);
  std::vector<T> y(x.numel(), T(0));
  const T* px = x.data().data();
  const T* pk = kernel.data().data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        T acc = T(0);
        for (std::size_t di = 0; di < 3; ++di) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + di) - 1;
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t dj = 0; dj < 3; ++dj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - 1;
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
            acc += pk[c * 9 + di * 3 + dj] * px[lay.index(c, ii, jj)];
          }
        }
        y[lay.index(c, i, j)] = acc;
      }
    }
  }
  return emit<T>(op, x.shape(), std::move(y), {&x, &kernel}, [=, nx = x.node(), nk = kernel.node()](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      const T* px = nx->data.data();
      const T* pk = nk->data.data();
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < H; ++i) {
          for (std::size_t j = 0; j < W; ++j) {
            const T gy = g[lay.index(c, i, j)];
            for (std::size_t di = 0; di < 3; ++di) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + di) - 1;
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t dj = 0; dj < 3; ++dj) {
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - 1;
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
                const std::size_t src = lay.index(c, ii, jj);
                if (!gin[0].empty()) gin[0][src] += pk[c * 9 + di * 3 + dj] * gy;
                if (!gin[1].empty()) gin[1][c * 9 + di * 3 + dj] += px[src] * gy;
              }
            }
          }
        }
      }
    };
  });
}

}  // namespace

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel) {
  if (x.rank() != 3) throw DimensionError("depthwise_conv2d: expected [C x H x W], got " + shape_to_string(x.shape()));
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H == 0 || W == 0) throw DimensionError("depthwise_conv2d: empty spatial grid");
  check_kernel(kernel, C);
  return depthwise_impl("depthwise_conv2d", x, kernel, GridLayout{C, H, W, H * W, 1});
}

template <typename T>
Tensor<T> depthwise_conv2d_tokens(const Tensor<T>& x, std::size_t height, std::size_t width,
                                  const Tensor<T>& kernel) {
  require_matrix("depthwise_conv2d_tokens", x);
  if (height * width != x.rows() || height == 0 || width == 0) {
    throw DimensionError("depthwise_conv2d_tokens: grid " + std::to_string(height) + "x" + std::to_string(width) +
                         " does not match " + shape_to_string(x.shape()));
  }
  const std::size_t C = x.cols();
  check_kernel(kernel, C);
  return depthwise_impl("depthwise_conv2d_tokens", x, kernel, GridLayout{C, height, width, 1, C});
}

template <typename T>
Tensor<T> gather_mean(const Tensor<T>& x, const std::vector<std::vector<std::size_t>>& groups) {
  require_matrix("gather_mean", x);
  const std::size_t P = x.rows(), C = x.cols(), G = groups.size();
  std::vector<T> y(G * C, T(0));
  std::uint64_t work = 0;
  for (std::size_t g = 0; g < G; ++g) {
    const auto& members = groups[g];
    if (members.empty()) continue;
    T* out = y.data() + g * C;
    for (std::size_t p : members) {
      if (p >= P) {
        throw DimensionError("gather_mean: row index " + std::to_string(p) + " out of range for " +
                             shape_to_string(x.shape()));
      }
      const T* row = x.data().data() + p * C;
      for (std::size_t c = 0; c < C; ++c) out[c] += row[c];
    }
    const T inv = T(1) / static_cast<T>(members.size());
    for (std::size_t c = 0; c < C; ++c) out[c] *= inv;
    work += members.size() * C;
  }
  count_flops(work);
  return emit<T>("gather_mean", {G, C}, std::move(y), {&x}, [=, groups = groups](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      for (std::size_t e = 0; e < G; ++e) {
        const auto& members = groups[e];
        if (members.empty()) continue;
        const T inv = T(1) / static_cast<T>(members.size());
        for (std::size_t p : members)
          for (std::size_t c = 0; c < C; ++c) gin[0][p * C + c] += g[e * C + c] * inv;
      }
    };
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_matrix("slice_cols", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (begin > end || end > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                         shape_to_string(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<T> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.data().data() + i * n + begin, w, out.data() + i * w);
  return emit<T>("slice_cols", {m, w}, std::move(out), {&x}, [=](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) gin[0][i * n + begin + j] += g[i * w + j];
    };
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    n += p.cols();
  }
  std::vector<T> out(m * n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(p.data().data() + i * w, w, out.data() + i * n + offset);
    offset += w;
  }

  // emit() takes a fixed initializer list; concat records its inputs directly.
  check_finite("concat_cols", out);
  Tensor<T> result(Shape{m, n}, std::move(out));
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) return result;
  bool needs_grad = false;
  std::vector<NodePtr<T>> nodes;
  for (const auto& p : parts) {
    if (p.requires_grad()) {
      if (p.node()->tape != nullptr && p.node()->tape != tape) {
        throw ContractError("concat_cols: input was recorded on a different tape");
      }
      needs_grad = true;
    }
    nodes.push_back(p.node());
  }
  if (!needs_grad) return result;
  tape->record(std::move(nodes), result.node(), [=](std::span<const T> g, GradIn<T> gin) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t w = widths[k];
      if (!gin[k].empty()) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gin[k][i * w + j] += g[i * n + off + j];
      }
      off += w;
    }
  });
  return result;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t height, std::size_t width, std::size_t stride) {
  require_matrix("patchify", x);
  if (height * width != x.rows()) {
    throw DimensionError("patchify: grid " + std::to_string(height) + "x" + std::to_string(width) +
                         " does not match " + shape_to_string(x.shape()));
  }
  if (stride == 0 || height % stride != 0 || width % stride != 0) {
    throw ConfigError("patchify: grid " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by stride " + std::to_string(stride));
  }
  const std::size_t C = x.cols(), oh = height / stride, ow = width / stride;
  const std::size_t cols = stride * stride * C;
  // index[r * cols + q] = flat source index of output element (r, q)
  std::vector<std::size_t> index(oh * ow * cols);
  std::vector<T> out(index.size());
  for (std::size_t bi = 0; bi < oh; ++bi) {
    for (std::size_t bj = 0; bj < ow; ++bj) {
      const std::size_t r = bi * ow + bj;
      for (std::size_t di = 0; di < stride; ++di) {
        for (std::size_t dj = 0; dj < stride; ++dj) {
          const std::size_t src_row = (bi * stride + di) * width + (bj * stride + dj);
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t q = (di * stride + dj) * C + c;
            index[r * cols + q] = src_row * C + c;
            out[r * cols + q] = x[src_row * C + c];
          }
        }
      }
    }
  }
  return emit<T>("patchify", {oh * ow, cols}, std::move(out), {&x}, [index = std::move(index)](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][index[i]] += g[i];
    };
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t label) {
  const std::size_t K = logits.numel();
  if (label >= K) {
    throw DimensionError("cross_entropy: label " + std::to_string(label) + " out of range for " + std::to_string(K) +
                         " classes");
  }
  const T mx = *std::max_element(logits.data().begin(), logits.data().end());
  std::vector<T> prob(K);
  T total = T(0);
  for (std::size_t i = 0; i < K; ++i) {
    prob[i] = std::exp(logits[i] - mx);
    total += prob[i];
  }
  for (auto& p : prob) p /= total;
  const T loss = std::log(total) + mx - logits[label];
  return emit<T>("cross_entropy", {}, std::vector<T>{loss}, {&logits}, [=, prob = std::move(prob)](const Node<T>*) {
    return [=](std::span<const T> g, GradIn<T> gin) {
      for (std::size_t i = 0; i < K; ++i) gin[0][i] += g[0] * (prob[i] - (i == label ? T(1) : T(0)));
    };
  });
}

#define HGFORMER_INSTANTIATE_OPS(T)                                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> transpose(const Tensor<T>&);                                                           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                                            \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul_row(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sum(const Tensor<T>&);                                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                                \
  template Tensor<T> mean_rows(const Tensor<T>&);                                                           \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                        \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                   \
  template Tensor<T> gelu(const Tensor<T>&);                                                                \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> depthwise_conv2d_tokens(const Tensor<T>&, std::size_t, std::size_t, const Tensor<T>&); \
  template Tensor<T> gather_mean(const Tensor<T>&, const std::vector<std::vector<std::size_t>>&);            \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                                \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                            \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                     \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::size_t);

HGFORMER_INSTANTIATE_OPS(float)
HGFORMER_INSTANTIATE_OPS(double)

#undef HGFORMER_INSTANTIATE_OPS

}  // namespace hgformer::ops
