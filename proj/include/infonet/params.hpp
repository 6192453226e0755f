#pragma once

#include <map>
#include <string>
#include <vector>

#include "infonet/tensor.hpp"

namespace infonet::ad {

// Named parameter tensors in insertion order. Order is part of the
// checkpoint layout and of the deterministic update sequence.
template <class Real>
class ParamStore {
 public:
  Tensor<Real>& add(const std::string& name, Tensor<Real> value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  Tensor<Real>& at(const std::string& name);
  const Tensor<Real>& at(const std::string& name) const;

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  Tensor<Real>& operator[](std::size_t i) { return values_[i]; }
  const Tensor<Real>& operator[](std::size_t i) const { return values_[i]; }

  std::size_t parameter_count() const;

  template <class Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], values_[i].template cast<Other>());
    return out;
  }

  // Zero tensors with matching names/shapes (gradient accumulators).
  ParamStore zeros_like() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<Real>> values_;
  std::map<std::string, std::size_t> index_;
};

// Binds every parameter of a store as a gradient-requiring leaf.
template <class Real>
class BoundParams {
 public:
  BoundParams(Tape<Real>& tape, const ParamStore<Real>& store, bool requires_grad = true);

  Var<Real> operator()(const std::string& name) const;

  // grads[i] += scale * d(output)/d(param i); call after tape.backward().
  void accumulate(ParamStore<Real>& grads, Real scale = Real(1)) const;

 private:
  const Tape<Real>* tape_;
  const ParamStore<Real>* store_;
  std::vector<Var<Real>> vars_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool maximize = false;
};

template <class Real>
struct AdamState {
  ParamStore<Real> m;
  ParamStore<Real> v;
  long step = 0;
};

template <class Real>
AdamState<Real> make_adam_state(const ParamStore<Real>& params);

// One bias-corrected Adam update; maximize negates the gradient.
template <class Real>
void adam_step(ParamStore<Real>& params, const ParamStore<Real>& grads, AdamState<Real>& state,
               const AdamConfig& cfg);

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class BoundParams<float>;
extern template class BoundParams<double>;

}  // namespace infonet::ad
