#include "infonet/params.hpp"

#include <cmath>
#include <stdexcept>

namespace infonet::ad {

template <class Real>
Tensor<Real>& ParamStore<Real>::add(const std::string& name, Tensor<Real> value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
  return values_.back();
}

template <class Real>
std::size_t ParamStore<Real>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

template <class Real>
Tensor<Real>& ParamStore<Real>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return values_[it->second];
}

template <class Real>
const Tensor<Real>& ParamStore<Real>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return values_[it->second];
}

template <class Real>
std::size_t ParamStore<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

template <class Real>
ParamStore<Real> ParamStore<Real>::zeros_like() const {
  ParamStore out;
  for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], Tensor<Real>(values_[i].shape()));
  return out;
}

template <class Real>
BoundParams<Real>::BoundParams(Tape<Real>& tape, const ParamStore<Real>& store, bool requires_grad)
    : tape_(&tape), store_(&store) {
  vars_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) vars_.push_back(tape.leaf(store[i], requires_grad));
}

template <class Real>
Var<Real> BoundParams<Real>::operator()(const std::string& name) const {
  return vars_[store_->index_of(name)];
}

template <class Real>
void BoundParams<Real>::accumulate(ParamStore<Real>& grads, Real scale) const {
  if (grads.size() != vars_.size()) throw std::invalid_argument("gradient store does not match parameters");
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    const Tensor<Real>* g = tape_->grad(vars_[i]);
    if (!g) continue;
    auto& dst = grads[i];
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * (*g)[j];
  }
}

template <class Real>
AdamState<Real> make_adam_state(const ParamStore<Real>& params) {
  return AdamState<Real>{params.zeros_like(), params.zeros_like(), 0};
}

template <class Real>
void adam_step(ParamStore<Real>& params, const ParamStore<Real>& grads, AdamState<Real>& state,
               const AdamConfig& cfg) {
  if (!(cfg.lr > 0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient/state stores do not align");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const Real b1 = static_cast<Real>(cfg.beta1), b2 = static_cast<Real>(cfg.beta2);
  const Real step_size = static_cast<Real>(cfg.lr / bc1);
  const Real inv_sqrt_bc2 = static_cast<Real>(1.0 / std::sqrt(bc2));
  const Real eps = static_cast<Real>(cfg.eps);
  const Real sign = cfg.maximize ? Real(-1) : Real(1);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (g.shape() != p.shape() || m.shape() != p.shape()) {
      throw std::invalid_argument("adam_step: shape mismatch for " + params.names()[i] + ": " +
                                  shape_str(p.shape()) + " vs " + shape_str(g.shape()));
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      const Real gj = sign * g[j];
      m[j] = b1 * m[j] + (Real(1) - b1) * gj;
      v[j] = b2 * v[j] + (Real(1) - b2) * gj * gj;
      p[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template class BoundParams<float>;
template class BoundParams<double>;
template AdamState<float> make_adam_state(const ParamStore<float>&);
template AdamState<double> make_adam_state(const ParamStore<double>&);
template void adam_step(ParamStore<float>&, const ParamStore<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step(ParamStore<double>&, const ParamStore<double>&, AdamState<double>&, const AdamConfig&);

}  // namespace infonet::ad
