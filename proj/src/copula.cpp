#include "infonet/copula.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace infonet::copula {

std::vector<double> rank_transform(std::span<const double> values) {
  const std::size_t n = values.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(values[i])) {
      throw std::invalid_argument("rank_transform: non-finite value at index " + std::to_string(i));
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> out(n);
  const double dn = static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) out[order[r]] = static_cast<double>(r + 1) / dn;
  return out;
}

RankedSequence empirical_copula(const sim::JointSequence& seq) {
  seq.validate();
  return RankedSequence{rank_transform(seq.xs), rank_transform(seq.ys)};
}

}  // namespace infonet::copula
