#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lohg/error.hpp"

namespace lohg {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
class Tensor;
template <typename T>
class Tape;
template <typename T>
class TapeScope;

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  const Tape<T>* producer = nullptr;  // tape that recorded the producing op, null for leaves
};

template <typename T>
struct Access;

}  // namespace detail

/// Dense row-major tensor with shared payload. Copies are shallow; gradient
/// state lives on the shared node so autodiff sees every alias.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return from(shape, std::vector<T>(static_cast<size_t>(checked_numel(shape)), T(0)));
  }

  static Tensor full(Shape shape, T value) {
    return from(shape, std::vector<T>(static_cast<size_t>(checked_numel(shape)), value));
  }

  static Tensor scalar(T value) { return full({1}, value); }

  /// Takes ownership of `values`; every element must be finite.
  static Tensor from(Shape shape, std::vector<T> values) {
    if (checked_numel(shape) != static_cast<int64_t>(values.size())) {
      throw DimensionError("Tensor::from: shape " + shape_str(shape) + " wants " +
                           std::to_string(checked_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    for (size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        throw NumericError("Tensor::from: non-finite value at flat index " + std::to_string(i));
      }
    }
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(values);
    return t;
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return checked()->shape; }
  size_t ndim() const { return checked()->shape.size(); }
  int64_t dim(size_t i) const {
    const Shape& s = checked()->shape;
    if (i >= s.size()) throw DimensionError("Tensor::dim: axis out of range");
    return s[i];
  }
  int64_t numel() const { return static_cast<int64_t>(checked()->data.size()); }

  std::span<const T> data() const { return checked()->data; }

  /// Mutable payload access for construction and optimizer updates. Must not be
  /// used on a tensor that is an interior node of a live tape.
  std::span<T> mutable_data() { return checked()->data; }

  T item() const {
    if (numel() != 1) {
      throw ContractError("Tensor::item: expected a single element, shape is " +
                          shape_str(shape()));
    }
    return checked()->data[0];
  }

  Tensor& set_requires_grad(bool v = true) {
    checked()->requires_grad = v;
    return *this;
  }
  bool requires_grad() const { return checked()->requires_grad; }

  bool has_grad() const { return !checked()->grad.empty(); }

  /// Accumulated gradient; empty span when no gradient has reached this node.
  std::span<const T> grad() const { return checked()->grad; }

  void zero_grad() { checked()->grad.clear(); }

  /// Deep copy detached from any tape; result is a plain leaf.
  Tensor detached_copy() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = checked()->shape;
    t.node_->data = checked()->data;
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(checked()->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(checked()->data[i]);
    return Tensor<U>::from(checked()->shape, std::move(out));
  }

 private:
  static int64_t checked_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d <= 0) throw DimensionError("Tensor: non-positive extent in shape " + shape_str(shape));
      n *= d;
    }
    return n;
  }

  const std::shared_ptr<Node>& checked() const {
    if (!node_) throw ContractError("Tensor: use of undefined tensor");
    return node_;
  }

  std::shared_ptr<Node> node_;
  friend struct detail::Access<T>;
};

/// Wengert list. Ops executed while a tape is active append backward closures;
/// backward() replays them once in reverse. Single-shot by design.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  size_t entry_count() const { return entries_.size(); }

  void backward(const Tensor<T>& loss) {
    if (!loss.defined()) throw ContractError("Tape::backward: undefined loss tensor");
    if (loss.numel() != 1) {
      throw ContractError("Tape::backward: loss must be scalar, shape is " +
                          shape_str(loss.shape()));
    }
    auto node = detail::Access<T>::node(loss);
    if (node->producer != this) {
      throw ContractError("Tape::backward: loss was not produced on this tape");
    }
    if (consumed_) throw ContractError("Tape::backward: tape already consumed");
    consumed_ = true;
    node->grad.assign(1, T(1));
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
  static inline thread_local Tape* active_ = nullptr;

  friend class TapeScope<T>;
  friend struct detail::Access<T>;
};

/// RAII activation of a tape for the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::active_) { Tape<T>::active_ = &tape; }
  ~TapeScope() { Tape<T>::active_ = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

namespace detail {

/// Internal surface for op implementations. Not part of the public API.
template <typename T>
struct Access {
  using Node = TensorNode<T>;

  static const std::shared_ptr<Node>& node(const Tensor<T>& t) { return t.checked(); }

  static void check_finite(const std::vector<T>& values, const char* op) {
    for (size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        throw NumericError(std::string(op) + ": produced non-finite value at flat index " +
                           std::to_string(i));
      }
    }
  }

  /// Wraps op output data. Marks the result as tape-produced when a tape is
  /// active and any input carries gradient; rejects inputs from another tape.
  static Tensor<T> make_output(Shape shape, std::vector<T> data, const char* op,
                               std::initializer_list<const Tensor<T>*> inputs) {
    return make_output_n(std::move(shape), std::move(data), op,
                         std::vector<const Tensor<T>*>(inputs));
  }

  static Tensor<T> make_output_n(Shape shape, std::vector<T> data, const char* op,
                                 const std::vector<const Tensor<T>*>& inputs) {
    check_finite(data, op);
    Tensor<T> out;
    out.node_ = std::make_shared<Node>();
    out.node_->shape = std::move(shape);
    out.node_->data = std::move(data);
    Tape<T>* tape = Tape<T>::active();
    bool any_grad = false;
    for (const Tensor<T>* in : inputs) {
      const auto& n = node(*in);
      if (n->producer != nullptr && n->producer != tape) {
        throw ContractError(std::string(op) + ": input was produced on a different tape");
      }
      any_grad = any_grad || n->requires_grad;
    }
    if (tape != nullptr && any_grad) {
      out.node_->requires_grad = true;
      out.node_->producer = tape;
    }
    return out;
  }

  static bool traced(const Tensor<T>& t) { return node(t)->producer != nullptr; }

  static void push(std::function<void()> fn) {
    Tape<T>* tape = Tape<T>::active();
    if (tape == nullptr) throw ContractError("internal: recording without an active tape");
    tape->entries_.push_back(std::move(fn));
  }

  /// Adds `count` values into the node's gradient, allocating it on first use.
  /// Incoming values are finite-checked so a broken backward fails loudly.
  static void accumulate(const std::shared_ptr<Node>& n, const T* values, int64_t count,
                         const char* op) {
    if (count != static_cast<int64_t>(n->data.size())) {
      throw DimensionError(std::string(op) + ": gradient size mismatch");
    }
    for (int64_t i = 0; i < count; ++i) {
      if (!std::isfinite(values[i])) {
        throw NumericError(std::string(op) + ": non-finite gradient at flat index " +
                           std::to_string(i));
      }
    }
    if (n->grad.empty()) n->grad.assign(n->data.size(), T(0));
    for (int64_t i = 0; i < count; ++i) n->grad[static_cast<size_t>(i)] += values[i];
  }
};

}  // namespace detail

}  // namespace lohg
