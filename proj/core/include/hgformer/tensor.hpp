#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hgformer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // leaf accumulator; empty until first backward touches it
  bool requires_grad = false;
  // Set for op outputs recorded on a tape; leaves have tape == nullptr.
  Tape<T>* tape = nullptr;
  std::size_t slot = 0;
};

}  // namespace detail

// Dense row-major array with optional participation in reverse-mode autodiff.
// Copies share the underlying node; values are never mutated by ops.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor identity(std::size_t n, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const { return node_->data.size(); }
  // Matrix helpers; require rank 2.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const { return node_->data; }
  // Mutable access is reserved for leaves (parameters, inputs); op outputs are immutable.
  std::span<T> mutable_data();

  T item() const;
  T operator[](std::size_t flat) const { return node_->data[flat]; }
  T at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value);
  bool is_leaf() const { return node_->tape == nullptr; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Accumulated leaf gradient; zeros if backward never reached this tensor.
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  // Leaf copy of the values, outside any tape.
  Tensor detach() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Records differentiable ops in execution order; backward replays them in
// reverse. Single-threaded: one tape per thread of work.
template <typename T>
class Tape {
 public:
  using NodePtr = typename Tensor<T>::NodePtr;
  // grad_out is d(loss)/d(output); grad_in[i] is empty when input i needs no gradient.
  using BackwardFn = std::function<void(std::span<const T> grad_out, std::span<const std::span<T>> grad_in)>;

  Tape() = default;
  // Outputs recorded here become constant leaves once the tape is gone.
  ~Tape() { clear(); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<NodePtr> inputs, const NodePtr& output, BackwardFn fn);

  // Computes gradients of a scalar loss produced on this tape. With
  // flush_to_leaves, leaf gradients are added into each leaf's own buffer
  // (accumulating across calls); otherwise they stay readable via grad().
  void backward(const Tensor<T>& loss, bool flush_to_leaves = true);

  // Gradient of any tensor w.r.t. the loss of the last backward call. Empty span
  // if the tensor did not participate.
  std::span<const T> grad(const Tensor<T>& t) const;

  void flush_leaf_grads();
  std::size_t size() const { return entries_.size(); }
  void clear();

 private:
  struct Entry {
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardFn fn;
  };

  std::vector<T>& grad_buffer(const NodePtr& node);

  std::vector<Entry> entries_;
  std::vector<std::vector<T>> op_grads_;
  std::unordered_map<const detail::Node<T>*, std::pair<NodePtr, std::vector<T>>> leaf_grads_;
};

// Makes `tape` the recording target for ops executed on the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <typename T>
Tape<T>* active_tape();

// Backward through the tape that produced `loss`.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template class TapeScope<float>;
extern template class TapeScope<double>;

}  // namespace hgformer
