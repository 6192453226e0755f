#pragma once

// Shared helpers for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "infonet/ops.hpp"
#include "infonet/rng.hpp"
#include "infonet/simdist.hpp"

namespace infonet::testing {

inline ad::Tensor<double> random_tensor(const ad::Shape& shape, Rng& rng, double scale = 1.0) {
  ad::Tensor<double> t(shape);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

using GraphFn = std::function<ad::Var<double>(ad::Tape<double>&, const std::vector<ad::Var<double>>&)>;

struct GradCheck {
  double worst_rel = 0.0;  // max over inputs of ||fd - analytic|| / max(||fd||, ||analytic||)
  std::size_t worst_input = 0;
};

// Central finite differences of mean(f(inputs) * R) for a fixed random R,
// compared input by input with the reverse-mode gradient.
inline GradCheck check_gradients(const GraphFn& f, const std::vector<ad::Tensor<double>>& inputs, Rng& rng,
                                 double h = 1e-6) {
  ad::Tensor<double> weights;
  bool have_weights = false;
  auto objective = [&](const std::vector<ad::Tensor<double>>& xs, std::vector<ad::Tensor<double>>* grads) {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> vars;
    for (const auto& x : xs) vars.push_back(tape.leaf(x, true));
    auto out = f(tape, vars);
    if (!have_weights) {
      weights = random_tensor(out.shape(), rng);
      have_weights = true;
    }
    auto obj = ad::mean(ad::mul(out, tape.constant(weights)));
    const double v = obj.value().item();
    if (grads) {
      tape.backward(obj);
      for (const auto& var : vars) {
        const auto* g = tape.grad(var);
        grads->push_back(g ? *g : ad::Tensor<double>(var.shape()));
      }
    }
    return v;
  };
  std::vector<ad::Tensor<double>> analytic;
  objective(inputs, &analytic);
  GradCheck res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
    for (std::size_t e = 0; e < inputs[k].size(); ++e) {
      auto plus = inputs;
      plus[k][e] += h;
      auto minus = inputs;
      minus[k][e] -= h;
      const double fd = (objective(plus, nullptr) - objective(minus, nullptr)) / (2.0 * h);
      const double an = analytic[k][e];
      diff2 += (fd - an) * (fd - an);
      fd2 += fd * fd;
      an2 += an * an;
    }
    const double denom = std::max({std::sqrt(fd2), std::sqrt(an2), 1e-12});
    const double rel = std::sqrt(diff2) / denom;
    if (rel > res.worst_rel) {
      res.worst_rel = rel;
      res.worst_input = k;
    }
  }
  return res;
}

inline sim::JointSequence gaussian_sequence(double rho, std::size_t T, Rng& rng) {
  sim::GmmSpec spec;
  spec.weights = {1.0};
  spec.means = {Eigen::Vector2d::Zero()};
  Eigen::Matrix2d cov;
  cov << 1.0, rho, rho, 1.0;
  spec.covs = {cov};
  return sim::sample_joint(spec, T, rng);
}

inline sim::JointSequence uniform_independent(std::size_t T, Rng& rng) {
  sim::JointSequence s;
  for (std::size_t t = 0; t < T; ++t) {
    s.xs.push_back(rng.uniform());
    s.ys.push_back(rng.uniform());
  }
  return s;
}

}  // namespace infonet::testing
