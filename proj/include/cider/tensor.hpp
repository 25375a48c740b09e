#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cider/memory.hpp"

namespace cider {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Gradient recording is on by default; NoGradGuard disables it for the
/// current thread (inference, finite differences, optimizer updates).
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  memory::Buffer<T> data;
  memory::Buffer<T> grad;
  bool requires_grad = false;
  // Inputs this node was computed from; empty for leaves.
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's data/grad and accumulates into the parents' grads.
  std::function<void(std::span<const T> out, std::span<const T> grad_out)> backward;

  std::span<T> ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode gradient tape participation.
///
/// A Tensor is a shared handle: copies alias the same storage. Data is
/// treated as immutable once produced by an op; only leaves (parameters) are
/// mutated, by the optimizer, outside of recorded computation.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using BackwardFn = std::function<void(std::span<const T> out, std::span<const T> grad_out)>;

  Tensor() = default;

  static Tensor zeros(const Shape& shape) { return full(shape, T(0)); }

  static Tensor full(const Shape& shape, T value) {
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = shape;
    node->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    return Tensor(std::move(node));
  }

  static Tensor from_data(const Shape& shape, std::span<const T> values) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
      throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                  " does not match shape " + shape_string(shape));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = shape;
    node->data.assign(values.begin(), values.end());
    return Tensor(std::move(node));
  }

  static Tensor from_data(const Shape& shape, std::initializer_list<T> values) {
    return from_data(shape, std::span<const T>(values.begin(), values.size()));
  }

  static Tensor from_buffer(const Shape& shape, memory::Buffer<T>&& values) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
      throw std::invalid_argument("tensor buffer length does not match shape " +
                                  shape_string(shape));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = shape;
    node->data = std::move(values);
    return Tensor(std::move(node));
  }

  template <typename Rng>
  static Tensor randn(const Shape& shape, Rng& rng, T stddev = T(1)) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    Tensor t = zeros(shape);
    for (auto& v : t.node_->data) v = static_cast<T>(dist(rng));
    return t;
  }

  template <typename Rng>
  static Tensor uniform(const Shape& shape, Rng& rng, T lo, T hi) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    Tensor t = zeros(shape);
    for (auto& v : t.node_->data) v = static_cast<T>(dist(rng));
    return t;
  }

  /// Builds the result of a differentiable op. The backward closure is only
  /// kept when recording is enabled and some input requires a gradient.
  static Tensor record(const Shape& shape, memory::Buffer<T>&& values,
                       const std::vector<Tensor>& inputs, BackwardFn backward) {
    Tensor out = from_buffer(shape, std::move(values));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
    if (!any) return out;
    out.node_->requires_grad = true;
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) out.node_->parents.push_back(in.node_);
    }
    out.node_->backward = std::move(backward);
    return out;
  }

  static Tensor record(const Shape& shape, memory::Buffer<T>&& values,
                       std::initializer_list<Tensor> inputs, BackwardFn backward) {
    return record(shape, std::move(values), std::vector<Tensor>(inputs), std::move(backward));
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  /// Mutable access for parameter updates and test fixtures only.
  std::span<T> mutable_data() { return node_->data; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const T> grad() const { return node_->grad; }
  /// Gradient accumulator, allocated (zeroed) on first access.
  std::span<T> grad_accumulator() const { return node_->ensure_grad(); }
  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
  }

  T item() const {
    if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }

  T at(std::initializer_list<std::int64_t> index) const {
    if (index.size() != ndim()) throw std::out_of_range("tensor index rank mismatch");
    std::int64_t offset = 0;
    std::size_t axis = 0;
    for (auto i : index) {
      if (i < 0 || i >= node_->shape[axis]) throw std::out_of_range("tensor index out of range");
      offset = offset * node_->shape[axis] + i;
      ++axis;
    }
    return node_->data[static_cast<std::size_t>(offset)];
  }

  /// Copy of the values with no graph attached.
  Tensor detach() const { return from_data(shape(), data()); }

  /// Reverse pass from a scalar. Fills grads of every reachable tensor that
  /// requires one and releases the recorded graph.
  void backward() const;

  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node<T>> node_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cider
