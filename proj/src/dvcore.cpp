#include "infonet/dvcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "infonet/bilinear.hpp"

namespace infonet::dv {

namespace {

void check_probs(std::size_t L, std::span<const double> p) {
  if (L < 1 || p.size() != L * L) {
    throw std::invalid_argument("joint probabilities must be an L x L matrix");
  }
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("joint probabilities must be finite and >= 0");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-12) throw std::invalid_argument("joint probabilities sum to " + std::to_string(s));
}

double clamp_coord(double u, const char* name) {
  if (!(u >= -1e-12 && u <= 1.0 + 1e-12)) {
    throw std::invalid_argument(std::string("lookup: ") + name + " = " + std::to_string(u) + " outside [0, 1]");
  }
  return std::clamp(u, 0.0, 1.0);
}

}  // namespace

DiscriminantTable DiscriminantTable::constant(std::size_t L, double c) {
  return DiscriminantTable{L, std::vector<double>(L * L, c)};
}

void DiscriminantTable::validate() const {
  if (L < 2) throw std::invalid_argument("DiscriminantTable: L must be >= 2");
  if (values.size() != L * L) throw std::invalid_argument("DiscriminantTable: expected L*L values");
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("DiscriminantTable: non-finite entry");
  }
}

double lookup(const DiscriminantTable& table, double u, double v) {
  u = clamp_coord(u, "u");
  v = clamp_coord(v, "v");
  const auto st = bilinear_stencil(table.L, u, v);
  return st.w00() * table.at(st.i0, st.j0) + st.w01() * table.at(st.i0, st.j1) + st.w10() * table.at(st.i1, st.j0) +
         st.w11() * table.at(st.i1, st.j1);
}

std::vector<double> shuffle_marginal(std::span<const double> vs, Rng& rng) {
  std::vector<double> out(vs.begin(), vs.end());
  std::shuffle(out.begin(), out.end(), rng.engine());
  return out;
}

double log_mean_exp(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("log_mean_exp of an empty sequence");
  const double mx = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s / static_cast<double>(x.size()));
}

double dv_value(const DiscriminantTable& table, const copula::RankedSequence& joint, std::span<const double> marg_vs) {
  const std::size_t T = joint.size();
  if (joint.vs.size() != T || marg_vs.size() != T || T == 0) {
    throw std::invalid_argument("dv_value: joint and marginal sequences must share a non-zero length");
  }
  double first = 0.0;
  std::vector<double> second(T);
  for (std::size_t t = 0; t < T; ++t) {
    first += lookup(table, joint.us[t], joint.vs[t]);
    second[t] = lookup(table, joint.us[t], marg_vs[t]);
  }
  return first / static_cast<double>(T) - log_mean_exp(second);
}

double mi_loss_batch(std::span<const DiscriminantTable> tables, std::span<const copula::RankedSequence> joints,
                     Rng& rng) {
  if (tables.size() != joints.size() || tables.empty()) {
    throw std::invalid_argument("mi_loss_batch: " + std::to_string(tables.size()) + " tables vs " +
                                std::to_string(joints.size()) + " sequences");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const auto marg = shuffle_marginal(joints[i].vs, rng);
    total += dv_value(tables[i], joints[i], marg);
  }
  return total / static_cast<double>(tables.size());
}

template <class Real>
ad::Var<Real> dv_objective(ad::Var<Real> table, const copula::RankedSequence& joint, std::span<const double> marg_vs) {
  const std::size_t T = joint.size();
  if (marg_vs.size() != T || T == 0) throw std::invalid_argument("dv_objective: sequence length mismatch");
  auto joint_vals = ad::bilinear_lookup(table, joint.us, joint.vs);
  auto marg_vals = ad::bilinear_lookup(table, joint.us, marg_vs);
  auto first = ad::mean(joint_vals);
  auto lse = ad::logsumexp(marg_vals);
  auto log_t = table.tape->constant(ad::Tensor<Real>::scalar(static_cast<Real>(std::log(static_cast<double>(T)))));
  return ad::sub(first, ad::sub(lse, log_t));
}

template <class Real>
LossWithGrad<Real> mi_loss_batch_grad(std::span<const ad::Tensor<Real>> tables,
                                      std::span<const copula::RankedSequence> joints, Rng& rng) {
  if (tables.size() != joints.size() || tables.empty()) {
    throw std::invalid_argument("mi_loss_batch: " + std::to_string(tables.size()) + " tables vs " +
                                std::to_string(joints.size()) + " sequences");
  }
  LossWithGrad<Real> out;
  const Real inv_n = Real(1) / static_cast<Real>(tables.size());
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const auto marg = shuffle_marginal(joints[i].vs, rng);
    ad::Tape<Real> tape;
    auto table = tape.leaf(tables[i], true);
    auto j = ad::scale(dv_objective(table, joints[i], marg), inv_n);
    tape.backward(j);
    out.loss += static_cast<double>(j.value()[0]);
    out.table_grads.push_back(*tape.grad(table));
  }
  return out;
}

template ad::Var<float> dv_objective(ad::Var<float>, const copula::RankedSequence&, std::span<const double>);
template ad::Var<double> dv_objective(ad::Var<double>, const copula::RankedSequence&, std::span<const double>);
template LossWithGrad<float> mi_loss_batch_grad(std::span<const ad::Tensor<float>>,
                                                std::span<const copula::RankedSequence>, Rng&);
template LossWithGrad<double> mi_loss_batch_grad(std::span<const ad::Tensor<double>>,
                                                 std::span<const copula::RankedSequence>, Rng&);

OptimalTable optimal_table_discrete(std::size_t L, std::span<const double> p) {
  check_probs(L, p);
  std::vector<double> px(L, 0.0), py(L, 0.0);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) {
      px[i] += p[i * L + j];
      py[j] += p[i * L + j];
    }
  OptimalTable out;
  out.table.L = L;
  out.table.values.assign(L * L, kZeroCellSentinel);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) {
      const double pij = p[i * L + j];
      if (pij > 0.0) {
        const double theta = std::log(pij / (px[i] * py[j]));
        out.table.values[i * L + j] = theta;
        out.exact_mi += pij * theta;
      }
    }
  return out;
}

double expected_dv_value(const DiscriminantTable& table, std::span<const double> p) {
  const std::size_t L = table.L;
  check_probs(L, p);
  std::vector<double> px(L, 0.0), py(L, 0.0);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) {
      px[i] += p[i * L + j];
      py[j] += p[i * L + j];
    }
  double first = 0.0;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < L * L; ++k) {
    first += p[k] * table.values[k];
    if (px[k / L] * py[k % L] > 0.0) mx = std::max(mx, table.values[k]);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) s += px[i] * py[j] * std::exp(table.values[i * L + j] - mx);
  return first - (mx + std::log(s));
}

}  // namespace infonet::dv
