#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pointresnet/error.hpp"

namespace pointresnet {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

/// Dense row-major array handle. Copies share storage; use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node>()) {
    check_extents(shape);
    node_->data.assign(element_count(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
    check_extents(shape);
    if (values.size() != element_count(shape)) {
      throw ShapeError("tensor of shape " + to_string(shape) + " needs " +
                       std::to_string(element_count(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  /// Extent along `axis`; negative axes count from the back.
  std::size_t extent(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                       to_string(shape()));
    }
    return node_->shape[static_cast<std::size_t>(a)];
  }

  std::span<const T> values() const { return node_->data; }
  std::span<T> values_mut() { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }

  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const {
    Tensor t(shape(), node_->data);
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  static void check_extents(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeError("zero extent in shape " + to_string(shape));
    }
  }

  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations for one graph.
template <class T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn fn) {
    produced_.insert(output.get());
    entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(fn)});
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool produced(const Tensor<T>& t) const { return produced_.count(&t.node()) != 0; }

  /// Populates grad on every requires_grad tensor that `root` depends on.
  /// Leaf gradients accumulate across calls.
  void backward(const Tensor<T>& root) {
    if (!root.defined() || root.size() != 1) {
      throw TapeError("backward root must be a scalar, got shape " +
                      (root.defined() ? to_string(root.shape()) : std::string("<undefined>")));
    }
    if (!produced(root)) throw TapeError("backward root was not produced on this tape");
    root.node().ensure_grad();
    root.node().grad[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      it->backward();
    }
  }

  void clear() {
    entries_.clear();
    produced_.clear();
  }

 private:
  struct Entry {
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardFn backward;
  };

  std::vector<Entry> entries_;
  std::unordered_set<const TensorNode<T>*> produced_;
};

template <class T>
void backward(const Tensor<T>& root, Tape<T>& tape) {
  tape.backward(root);
}

namespace detail {

template <class T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

inline bool& finite_checks_slot() {
  thread_local bool on = false;
  return on;
}

}  // namespace detail

/// Makes `tape` the recording target for ops on this thread while in scope.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(detail::active_tape_slot<T>()) {
    detail::active_tape_slot<T>() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording on this thread while in scope.
template <class T>
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape_slot<T>()) {
    detail::active_tape_slot<T>() = nullptr;
  }
  ~NoGradScope() { detail::active_tape_slot<T>() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Debug mode: every op checks its output for NaN/Inf and throws NonFiniteError.
inline void set_finite_checks(bool on) { detail::finite_checks_slot() = on; }
inline bool finite_checks_enabled() { return detail::finite_checks_slot(); }

namespace detail {

/// The tape an op should record on, or null when no input needs a gradient.
template <class T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = active_tape_slot<T>();
  if (!tape) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

/// Marks `out` as differentiable and appends its backward rule.
template <class T, class Fn>
void record(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs,
            Tensor<T>& out, Fn&& fn) {
  out.set_requires_grad(true);
  std::vector<typename Tape<T>::NodePtr> nodes;
  nodes.reserve(inputs.size());
  for (const Tensor<T>* t : inputs) nodes.push_back(t->node_ptr());
  tape->record(std::move(nodes), out.node_ptr(), std::forward<Fn>(fn));
}

template <class T>
void check_finite(const Tensor<T>& out, const char* op) {
  if (!finite_checks_enabled()) return;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) {
      throw NonFiniteError(std::string("non-finite value produced by ") + op +
                           " at flat index " + std::to_string(i));
    }
  }
}

/// Gradient buffer of an input node, or null when it does not take gradients.
template <class T>
T* grad_target(TensorNode<T>* node) {
  if (!node->requires_grad) return nullptr;
  node->ensure_grad();
  return node->grad.data();
}

}  // namespace detail
}  // namespace pointresnet
