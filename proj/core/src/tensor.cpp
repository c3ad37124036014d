#include "hgformer/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "hgformer/errors.hpp"

namespace hgformer {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

template <typename T>
Tape<T>*& tape_slot() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " + std::to_string(data.size()));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::identity(std::size_t n, bool requires_grad) {
  std::vector<T> data(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i) data[i * n + i] = T(1);
  return Tensor(Shape{n, n}, std::move(data), requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t i) const {
  if (i >= rank()) {
    throw DimensionError("dimension index " + std::to_string(i) + " out of range for shape " +
                         shape_to_string(shape()));
  }
  return node_->shape[i];
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_to_string(shape()));
  return node_->shape[0];
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_to_string(shape()));
  return node_->shape[1];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!is_leaf()) throw ContractError("op outputs are immutable; detach() first");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::size_t row, std::size_t col) const {
  return node_->data[row * cols() + col];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  if (!is_leaf()) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = value;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

template <typename T>
void Tape<T>::record(std::vector<NodePtr> inputs, const NodePtr& output, BackwardFn fn) {
  output->tape = this;
  output->slot = entries_.size();
  output->requires_grad = true;
  entries_.push_back(Entry{std::move(inputs), output, std::move(fn)});
}

template <typename T>
std::vector<T>& Tape<T>::grad_buffer(const NodePtr& node) {
  if (node->tape == this) {
    auto& g = op_grads_[node->slot];
    if (g.empty()) g.assign(node->data.size(), T(0));
    return g;
  }
  auto [it, inserted] = leaf_grads_.try_emplace(node.get());
  if (inserted) it->second = {node, std::vector<T>(node->data.size(), T(0))};
  return it->second.second;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss, bool flush_to_leaves) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
  }
  const auto& root = loss.node();
  if (root->tape != this) throw ContractError("backward(): loss was not recorded on this tape");

  op_grads_.assign(entries_.size(), {});
  leaf_grads_.clear();
  grad_buffer(root)[0] = T(1);

  std::vector<std::span<T>> grad_in;
  for (std::size_t idx = root->slot + 1; idx-- > 0;) {
    Entry& e = entries_[idx];
    const auto& g_out = op_grads_[idx];
    if (g_out.empty()) continue;  // not on a path to the loss
    grad_in.assign(e.inputs.size(), std::span<T>{});
    for (std::size_t i = 0; i < e.inputs.size(); ++i) {
      const NodePtr& in = e.inputs[i];
      if (in && in->requires_grad) grad_in[i] = grad_buffer(in);
    }
    e.fn(g_out, grad_in);
  }
  if (flush_to_leaves) flush_leaf_grads();
}

template <typename T>
std::span<const T> Tape<T>::grad(const Tensor<T>& t) const {
  const auto* node = t.node().get();
  if (node->tape == this) {
    return node->slot < op_grads_.size() ? std::span<const T>(op_grads_[node->slot]) : std::span<const T>{};
  }
  auto it = leaf_grads_.find(node);
  return it == leaf_grads_.end() ? std::span<const T>{} : std::span<const T>(it->second.second);
}

template <typename T>
void Tape<T>::flush_leaf_grads() {
  for (auto& [key, entry] : leaf_grads_) {
    auto& [node, g] = entry;
    if (node->grad.empty()) node->grad.assign(node->data.size(), T(0));
    for (std::size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
  }
}

template <typename T>
void Tape<T>::clear() {
  for (auto& e : entries_) {
    e.output->tape = nullptr;
    e.output->requires_grad = false;
  }
  entries_.clear();
  op_grads_.clear();
  leaf_grads_.clear();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(tape_slot<T>()) {
  tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  tape_slot<T>() = previous_;
}

template <typename T>
Tape<T>* active_tape() {
  return tape_slot<T>();
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.node()->tape == nullptr) {
    throw ContractError("backward(): loss is not the output of a recorded op");
  }
  loss.node()->tape->backward(loss);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template Tape<float>* active_tape<float>();
template Tape<double>* active_tape<double>();
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace hgformer
