#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "priq/error.hpp"

namespace priq {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until a backward pass touches the node
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor with shared storage.
///
/// Copies of a Tensor alias the same node, so gradients written during
/// backward are visible through every handle. Use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    node_->values.assign(shape_numel(shape), T(0));
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.node_->values.begin(), t.node_->values.end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->values.size(); }

  std::span<const T> values() const { return node_->values; }
  std::span<T> mutable_values() { return node_->values; }
  const T* data() const { return node_->values.data(); }
  T* data() { return node_->values.data(); }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->values[0];
  }

  T operator[](std::size_t flat) const { return node_->values[flat]; }
  T& operator[](std::size_t flat) { return node_->values[flat]; }

  template <typename... Idx>
  T& at(Idx... idx) {
    return node_->values[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... Idx>
  T at(Idx... idx) const {
    return node_->values[offset({static_cast<std::size_t>(idx)...})];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Deep copy of values; the copy is a fresh leaf.
  Tensor clone() const { return Tensor(shape(), node_->values, requires_grad()); }
  Tensor detach() const { return Tensor(shape(), node_->values, false); }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    const Shape& s = node_->shape;
    if (idx.size() != s.size()) throw ShapeError("at: index rank mismatch for " + shape_str(s));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= s[axis]) throw ShapeError("at: index out of range on axis " + std::to_string(axis));
      flat = flat * s[axis] + i;
      ++axis;
    }
    return flat;
  }

  std::shared_ptr<TensorNode<T>> node_;
};

/// Ordered record of the differentiable operations executed while the tape
/// is active on the current thread.
///
/// Ops record a backward closure only when a tape is active and at least one
/// input requires a gradient. backward() replays the closures in reverse
/// execution order exactly once; the tape must be reset (or a new one used)
/// before another backward pass.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Makes a tape the active one for the current thread for its lifetime.
  class Scope {
   public:
    explicit Scope(Tape& tape) : previous_(active_slot()) { active_slot() = &tape; }
    ~Scope() { active_slot() = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active() { return active_slot(); }

  void record(const char* op, const std::shared_ptr<TensorNode<T>>& output,
              std::function<void()> backward) {
    if (exhausted_) {
      throw TapeError(std::string("tape: recording '") + op + "' on an exhausted tape; call reset()");
    }
    output->requires_grad = true;
    produced_.insert(output.get());
    entries_.push_back(Entry{op, std::move(backward)});
  }

  void backward(const Tensor<T>& loss) {
    if (exhausted_) throw TapeError("backward: tape already consumed; run a new forward pass");
    if (!loss.defined() || loss.numel() != 1) {
      throw TapeError("backward: loss must be a scalar, got " +
                      (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (!produced_.contains(loss.node().get())) {
      throw TapeError("backward: loss was not produced by this tape");
    }
    loss.node()->ensure_grad()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
    entries_.clear();
    produced_.clear();
    exhausted_ = true;
  }

  void reset() {
    entries_.clear();
    produced_.clear();
    exhausted_ = false;
  }

  std::size_t size() const { return entries_.size(); }
  bool exhausted() const { return exhausted_; }

  // Op names in execution order.
  std::vector<std::string> op_names() const {
    std::vector<std::string> names;
    for (const auto& e : entries_) names.emplace_back(e.op);
    return names;
  }

 private:
  struct Entry {
    const char* op;
    std::function<void()> backward;
  };

  static Tape*& active_slot() {
    thread_local Tape* slot = nullptr;
    return slot;
  }

  std::vector<Entry> entries_;
  std::unordered_set<const TensorNode<T>*> produced_;
  bool exhausted_ = false;
};

namespace detail {

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) throw NumericalError(std::string(op) + ": non-finite value in output");
  }
}

// Returns the active tape when any input needs a gradient, else nullptr.
template <typename T, typename... Ts>
Tape<T>* recording_tape(const Tensor<Ts>&... inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  const bool any = (... || inputs.requires_grad());
  return any ? tape : nullptr;
}

}  // namespace detail

}  // namespace priq
