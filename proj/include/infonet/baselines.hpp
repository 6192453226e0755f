#pragma once

// Classical and test-time-optimised MI estimators.

#include <cstdint>
#include <stdexcept>

#include "infonet/params.hpp"
#include "infonet/rng.hpp"
#include "infonet/simdist.hpp"

namespace infonet::baselines {

// Kraskov-Stoegbauer-Grassberger, first variant:
//   psi(k) + psi(T) - mean_t [psi(n_x(t) + 1) + psi(n_y(t) + 1)]
// with max-norm joint distances and strict marginal counts inside the
// k-th neighbour radius. When coincident points give a zero radius, both
// coordinates get seeded uniform jitter of 1e-10 * range first.
double ksg_mi(const sim::JointSequence& seq, int k = 5, std::uint64_t jitter_seed = 0);

// Same formula with O(T^2) all-pairs neighbour search. Reference path.
double ksg_mi_bruteforce(const sim::JointSequence& seq, int k = 5, std::uint64_t jitter_seed = 0);

// Gaussian-kernel density estimates (Silverman bandwidths, product kernel
// for the joint) averaged by resubstitution:
//   mean_t log p(x_t, y_t) / (p(x_t) p(y_t))
double kde_mi(const sim::JointSequence& seq);

// Silverman's rule: sigma * (4 / ((d + 2) n))^(1 / (d + 4)).
double silverman_bandwidth(double sigma, std::size_t n, std::size_t d);

struct MlpDiscriminant {
  ad::ParamStore<double> params;  // l0.w [2x64], l0.b, l1.w [64x64], l1.b, out.w [64x1], out.b

  static MlpDiscriminant initialize(std::size_t hidden, Rng& rng);
  // theta at each (x_t, y_t).
  std::vector<double> evaluate(std::span<const double> xs, std::span<const double> ys) const;
};

struct MineConfig {
  int iters = 500;
  std::size_t batch = 100;
  double lr = 1e-3;
  std::size_t hidden = 64;
};

class MineDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fits a fresh MLP discriminant by Adam ascent of the minibatch DV value
// (joint minibatch vs. minibatch with independently drawn y indices), then
// returns the DV value on the full sequence with one full shuffle.
double mine_mi(const sim::JointSequence& seq, const MineConfig& cfg, Rng& rng);

}  // namespace infonet::baselines
