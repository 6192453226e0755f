#pragma once

#include <cmath>
#include <cstddef>

namespace infonet {

// Interpolation stencil over an L x L grid whose cell centres sit at
// ((i + 0.5) / L, (j + 0.5) / L). value = sum of the four corner weights.
struct BilinearStencil {
  std::size_t i0, i1, j0, j1;
  double wx, wy;  // weight of the i1 row / j1 column

  double w00() const { return (1.0 - wx) * (1.0 - wy); }
  double w01() const { return (1.0 - wx) * wy; }
  double w10() const { return wx * (1.0 - wy); }
  double w11() const { return wx * wy; }
};

namespace detail {
inline void axis_stencil(std::size_t L, double u, std::size_t& lo, std::size_t& hi, double& w) {
  const double s = u * static_cast<double>(L) - 0.5;
  if (s <= 0.0) {
    lo = hi = 0;
    w = 0.0;
  } else if (s >= static_cast<double>(L - 1)) {
    lo = hi = L - 1;
    w = 0.0;
  } else {
    const double f = std::floor(s);
    lo = static_cast<std::size_t>(f);
    hi = lo + 1;
    w = s - f;
  }
}
}  // namespace detail

inline BilinearStencil bilinear_stencil(std::size_t L, double u, double v) {
  BilinearStencil st{};
  detail::axis_stencil(L, u, st.i0, st.i1, st.wx);
  detail::axis_stencil(L, v, st.j0, st.j1, st.wy);
  return st;
}

}  // namespace infonet
