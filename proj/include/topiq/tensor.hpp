#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace topiq {

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // lazily allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents.
  std::function<void(const Node&)> backward;
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
std::vector<T>& grad_of(Node<T>& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), T(0));
  return node.grad;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Row-major n-d array with an optional gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage. Results of
/// operations are never mutated after construction; only leaves (parameters
/// and inputs) are written in place, by optimizers and gradient checkers.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    for (auto extent : shape) {
      if (extent == 0) throw ArgumentError("tensor extents must be positive: " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw ArgumentError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Write access for leaves only (parameter updates, perturbations).
  std::span<T> mutable_data() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return !node_->backward; }

  T item() const {
    if (numel() != 1) throw ArgumentError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  /// Copy of the values with no graph history.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::Node<T>> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

/// Builds an op result. When grad mode is on and any input requires a
/// gradient, the node records its inputs and backward closure.
template <class T, class Backward>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, Backward&& backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (auto* in : inputs) needs = needs || in->requires_grad();
  if (!needs) return out;
  auto node = out.node();
  node->requires_grad = true;
  for (auto* in : inputs) {
    if (in->requires_grad()) node->parents.push_back(in->node());
  }
  node->backward = std::forward<Backward>(backward);
  return out;
}

template <class T>
Tensor<T> make_result_list(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                           std::function<void(const Node<T>&)> backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  auto node = out.node();
  node->requires_grad = true;
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->parents.push_back(in.node());
  }
  node->backward = std::move(backward);
  return out;
}

/// Gradient buffer of an input, or nullptr if it does not take gradients.
template <class T>
T* accum_target(const Tensor<T>& t) {
  if (!t.requires_grad()) return nullptr;
  return grad_of(*t.node()).data();
}

}  // namespace detail

/// Reverse-mode pass from a single-element root. Leaf gradients accumulate;
/// intermediate gradients are released once propagated.
template <class T>
void backward(const Tensor<T>& root) {
  if (root.numel() != 1) {
    throw ArgumentError("backward() needs a single-element root, got " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<T>* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  detail::grad_of(*root.node())[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

}  // namespace topiq
