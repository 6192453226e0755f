#pragma once

#include <span>
#include <vector>

#include "infonet/simdist.hpp"

namespace infonet::copula {

// Empirical-CDF coordinates in (0, 1].
struct RankedSequence {
  std::vector<double> us;
  std::vector<double> vs;

  std::size_t size() const { return us.size(); }
};

// rank(x_i) / T with 1-based ascending ranks; ties keep original index order.
std::vector<double> rank_transform(std::span<const double> values);

// Throws std::invalid_argument for T < 2 or non-finite entries.
RankedSequence empirical_copula(const sim::JointSequence& seq);

}  // namespace infonet::copula
