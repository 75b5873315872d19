#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "dfnet/common.hpp"

namespace dfnet {

/// Global autograd recording switch (thread local).
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace detail {

inline std::int64_t next_node_id() {
  static std::atomic<std::int64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
struct Node {
  std::int64_t id = next_node_id();
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on demand
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

/// Dense row-major n-d array with reverse-mode autodiff. Copying a Tensor
/// copies the handle; ops allocate fresh nodes, so results never alias
/// their inputs. Mutating values through data_mut() invalidates any graph
/// recorded against the old values.
template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    validate_shape(n->shape);
    n->value.assign(static_cast<std::size_t>(numel(n->shape)), fill);
    node_ = std::move(n);
  }

  Tensor(Shape shape, std::vector<T> data) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    validate_shape(n->shape);
    check_shape(static_cast<std::int64_t>(data.size()) == numel(n->shape),
                "tensor data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(n->shape));
    n->value = std::move(data);
    node_ = std::move(n);
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  static Tensor from_node(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> data_mut() { return node_->value; }

  T item() const {
    check_shape(size() == 1, "item() requires a scalar tensor, got " + shape_str(shape()));
    return node_->value[0];
  }

  T at(std::initializer_list<int> idx) const {
    return node_->value[static_cast<std::size_t>(offset(idx))];
  }

  std::int64_t offset(std::initializer_list<int> idx) const {
    check_shape(static_cast<int>(idx.size()) == rank(), "index rank mismatch");
    std::int64_t off = 0;
    int axis = 0;
    for (int i : idx) {
      off = off * shape()[static_cast<std::size_t>(axis)] + i;
      ++axis;
    }
    return off;
  }

  bool requires_grad() const { return node_->requires_grad; }

  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  std::span<const T> grad() const { return node_->grad; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Runs reverse-mode accumulation from this scalar.
  void backward() const {
    check_shape(size() == 1, "backward() requires a scalar loss, got " + shape_str(shape()));
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (auto& p : n->parents) {
        if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
      }
    }
    // ids grow in creation order, so descending id is a topological order
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id > b->id; });
    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (Node* n : order) {
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

  /// Same values, no history.
  Tensor detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->value = node_->value;
    return from_node(std::move(n));
  }

  /// Deep copy (no history, preserves requires_grad flag).
  Tensor clone() const {
    Tensor t = detach();
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  std::shared_ptr<Node> node() const { return node_; }

  bool all_finite() const {
    for (T v : node_->value) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

 private:
  static void validate_shape(const Shape& s) {
    for (int d : s) check_shape(d > 0, "tensor dimensions must be positive, got " + shape_str(s));
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

/// Builds an op result node. Parents and the backward closure are recorded
/// only when gradients are both enabled and needed.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                  std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (grad_mode()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(n));
}

}  // namespace detail

}  // namespace dfnet
