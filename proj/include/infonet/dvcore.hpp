#pragma once

// Donsker-Varadhan machinery over discretised discriminants on [0,1]^2.
//
//   J(theta) = mean_t theta(u_t, v_t) - log mean_t exp(theta(u_t, v~_t))
//
// where v~ is a random permutation of v (a draw from the product of the
// empirical marginals). J is a lower bound on the MI, attained at
// theta* = log p(u,v) / (p(u) p(v)) up to an additive constant.

#include <span>
#include <vector>

#include "infonet/copula.hpp"
#include "infonet/ops.hpp"
#include "infonet/rng.hpp"

namespace infonet::dv {

// L x L discriminant values; row index is the x-bin, column the y-bin.
struct DiscriminantTable {
  std::size_t L = 0;
  std::vector<double> values;

  static DiscriminantTable constant(std::size_t L, double c);
  double at(std::size_t i, std::size_t j) const { return values[i * L + j]; }
  // L >= 2, L*L finite values.
  void validate() const;
};

// Bilinear read between cell centres, clamped at the border. Coordinates
// within 1e-12 outside [0,1] are clamped; anything further throws.
double lookup(const DiscriminantTable& table, double u, double v);

// Uniformly random permutation (Fisher-Yates).
std::vector<double> shuffle_marginal(std::span<const double> vs, Rng& rng);

// log(mean(exp(x))) with max shift.
double log_mean_exp(std::span<const double> x);

double dv_value(const DiscriminantTable& table, const copula::RankedSequence& joint, std::span<const double> marg_vs);

// Mean DV value over the batch; one fresh shuffle per item, drawn in item order.
double mi_loss_batch(std::span<const DiscriminantTable> tables, std::span<const copula::RankedSequence> joints,
                     Rng& rng);

// DV value as a differentiable function of an [L x L] table variable.
template <class Real>
ad::Var<Real> dv_objective(ad::Var<Real> table, const copula::RankedSequence& joint, std::span<const double> marg_vs);

template <class Real>
struct LossWithGrad {
  double loss = 0.0;
  std::vector<ad::Tensor<Real>> table_grads;  // d loss / d table_i
};

// mi_loss_batch together with its gradient with respect to every table.
// Consumes the rng exactly like mi_loss_batch.
template <class Real>
LossWithGrad<Real> mi_loss_batch_grad(std::span<const ad::Tensor<Real>> tables,
                                      std::span<const copula::RankedSequence> joints, Rng& rng);

struct OptimalTable {
  DiscriminantTable table;
  double exact_mi = 0.0;
};

inline constexpr double kZeroCellSentinel = -30.0;

// theta*_ij = log(p_ij / (p_i. p_.j)) for an L x L probability matrix
// (row-major), -30 where p_ij = 0; exact_mi = sum p_ij theta*_ij.
OptimalTable optimal_table_discrete(std::size_t L, std::span<const double> joint_probs);

// Exact-expectation DV value of a table under a discrete joint on the grid:
// sum p_ij theta_ij - log sum p_i. p_.j exp(theta_ij).
double expected_dv_value(const DiscriminantTable& table, std::span<const double> joint_probs);

}  // namespace infonet::dv
