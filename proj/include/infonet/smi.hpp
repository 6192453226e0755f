#pragma once

// Sliced mutual information: mean of a scalar MI estimator over random
// one-dimensional projections of each variable.

#include <functional>
#include <stdexcept>

#include <Eigen/Dense>

#include "infonet/rng.hpp"
#include "infonet/simdist.hpp"

namespace infonet::smi {

// Scalar estimator on a projected pair; the seed drives any internal
// randomness (shuffles, minibatches).
using ScalarMiFn = std::function<double(const sim::JointSequence&, std::uint64_t seed)>;

struct ProjectionSet {
  std::vector<Eigen::VectorXd> dirs_x;
  std::vector<Eigen::VectorXd> dirs_y;

  std::size_t size() const { return dirs_x.size(); }
};

// Normalised standard-normal draw (uniform on the unit sphere).
Eigen::VectorXd sample_unit_direction(std::size_t d, Rng& rng);

class SliceError : public std::runtime_error {
 public:
  SliceError(std::size_t slice, const std::string& what)
      : std::runtime_error("slice " + std::to_string(slice) + ": " + what), slice_(slice) {}
  std::size_t slice() const { return slice_; }

 private:
  std::size_t slice_;
};

// Per-slice seeds derived from one draw of `rng`, so the result does not
// depend on how many worker threads evaluate slices.
struct SlicedResult {
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> slices;
};

SlicedResult sliced_mi_detailed(const ScalarMiFn& estimator, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                std::size_t m, Rng& rng, std::size_t threads = 1);

double sliced_mi(const ScalarMiFn& estimator, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, std::size_t m,
                 Rng& rng, std::size_t threads = 1);

// The m direction pairs sliced_mi would use for the same rng state.
ProjectionSet projection_set(std::size_t d_x, std::size_t d_y, std::size_t m, std::uint64_t base_seed);

}  // namespace infonet::smi
