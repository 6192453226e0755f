#include "infonet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace infonet::ad {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <class Real>
Tensor<Real>::Tensor(Shape shape) : shape_(std::move(shape)) {
  if (shape_.size() > 4) throw std::invalid_argument("tensor rank > 4: " + shape_str(shape_));
  data_.assign(shape_size(shape_), Real(0));
}

template <class Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> data) : Tensor(std::move(shape), std::span<const Real>(data)) {}

template <class Real>
Tensor<Real> Tensor<Real>::uninitialized(Shape shape) {
  if (shape.size() > 4) throw std::invalid_argument("tensor rank > 4: " + shape_str(shape));
  Tensor t(Shape{});
  t.data_.resize(shape_size(shape));
  t.shape_ = std::move(shape);
  return t;
}

template <class Real>
Tensor<Real>::Tensor(Shape shape, std::span<const Real> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_.size() > 4) throw std::invalid_argument("tensor rank > 4: " + shape_str(shape_));
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

template <class Real>
Real Tensor<Real>::item() const {
  if (data_.size() != 1) throw std::invalid_argument("item() on non-scalar " + shape_str(shape_));
  return data_[0];
}

template <class Real>
void Tensor<Real>::fill(Real v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <class Real>
bool Tensor<Real>::all_finite() const {
  for (Real v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <class Real>
Var<Real> Tape<Real>::constant(Tensor<Real> value) {
  return leaf(std::move(value), false);
}

template <class Real>
Var<Real> Tape<Real>::leaf(Tensor<Real> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && record_;
  nodes_.push_back(std::move(n));
  return Var<Real>{this, nodes_.size() - 1};
}

template <class Real>
Var<Real> Tape<Real>::push(Tensor<Real> value, std::initializer_list<std::size_t> inputs,
                           BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (auto i : inputs) {
      if (nodes_[i].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var<Real>{this, nodes_.size() - 1};
}

template <class Real>
Tensor<Real>& Tape<Real>::grad_buffer(std::size_t i) {
  Node& n = nodes_[i];
  if (!n.has_grad) {
    n.grad = Tensor<Real>(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <class Real>
const Tensor<Real>* Tape<Real>::grad(std::size_t i) const {
  const Node& n = nodes_[i];
  return n.has_grad ? &n.grad : nullptr;
}

template <class Real>
void Tape<Real>::backward(Var<Real> output) {
  if (!record_) throw std::logic_error("backward() on a non-recording tape");
  if (backward_done_) throw std::logic_error("backward() called twice on one tape");
  if (output.tape != this) throw std::invalid_argument("backward(): variable belongs to another tape");
  const auto& out = nodes_[output.index].value;
  if (out.size() != 1) {
    throw std::invalid_argument("backward() needs a scalar output, got " + shape_str(out.shape()));
  }
  backward_done_ = true;
  if (!nodes_[output.index].requires_grad) return;
  grad_buffer(output.index)[0] = Real(1);
  for (std::size_t i = output.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.has_grad) n.backward(*this, i);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace infonet::ad
