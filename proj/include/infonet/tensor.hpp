#pragma once

// Dense row-major tensors and a reverse-mode tape.
//
// A Tape owns every value produced while building an expression. Operations
// (see ops.hpp) append a node holding the forward value plus a backward rule;
// Tape::backward walks the nodes in reverse creation order, which is a valid
// reverse topological order because inputs always precede their consumers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <algorithm>
#include <initializer_list>
#include <memory>
#include <new>
#include <utility>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace infonet::ad {

using Shape = std::vector<std::size_t>;

// Allocator with a fixed 64-byte alignment (vectorised kernels then take the
// same code path, and so the same rounding, on every call) whose value-less
// construct() leaves elements uninitialised.
template <class T>
struct DefaultInitAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  DefaultInitAllocator() noexcept = default;
  template <class U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }

  template <class U>
  bool operator==(const DefaultInitAllocator<U>&) const noexcept {
    return true;
  }
};

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

template <class Real>
class Tensor {
 public:
  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<Real> data);
  Tensor(Shape shape, std::span<const Real> data);

  // Contents are unspecified; for outputs that are fully overwritten.
  static Tensor uninitialized(Shape shape);

  static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real* ptr() { return data_.data(); }
  const Real* ptr() const { return data_.data(); }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real item() const;

  void fill(Real v);
  bool all_finite() const;

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> out = Tensor<Other>::uninitialized(shape_);
    std::copy(data_.begin(), data_.end(), out.ptr());
    return out;
  }

 private:
  Shape shape_;
  std::vector<Real, DefaultInitAllocator<Real>> data_;
};

template <class Real>
class Tape;

template <class Real>
struct Var {
  Tape<Real>* tape = nullptr;
  std::size_t index = 0;

  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <class Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  // A non-recording tape computes forward values only; backward() is then
  // unavailable. Used for inference.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<Real> constant(Tensor<Real> value);
  Var<Real> leaf(Tensor<Real> value, bool requires_grad);

  // Appends an op node. The backward rule is dropped when no input needs a
  // gradient or the tape is not recording.
  Var<Real> push(Tensor<Real> value, std::initializer_list<std::size_t> inputs,
                 BackwardFn backward);

  const Tensor<Real>& value(std::size_t i) const { return nodes_[i].value; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }

  // Gradient accumulator for node i, allocated on first use.
  Tensor<Real>& grad_buffer(std::size_t i);
  const Tensor<Real>* grad(std::size_t i) const;
  const Tensor<Real>* grad(Var<Real> v) const { return grad(v.index); }

  void backward(Var<Real> output);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool record_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
};

template <class Real>
const Tensor<Real>& Var<Real>::value() const {
  return tape->value(index);
}

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace infonet::ad
