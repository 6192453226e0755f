#include "infonet/smi.hpp"

#include <cmath>
#include <exception>
#include <thread>

namespace infonet::smi {

Eigen::VectorXd sample_unit_direction(std::size_t d, Rng& rng) {
  if (d < 1) throw std::invalid_argument("sample_unit_direction: d must be >= 1");
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  double n2 = 0.0;
  do {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    n2 = v.squaredNorm();
  } while (!(n2 > 1e-300));
  return v / std::sqrt(n2);
}

namespace {

struct Slice {
  Eigen::VectorXd phi, psi;
  std::uint64_t seed;
};

Slice make_slice(std::size_t dx, std::size_t dy, std::uint64_t base_seed, std::size_t j) {
  Rng r = Rng(base_seed).split(j);
  Slice s;
  s.phi = sample_unit_direction(dx, r);
  s.psi = sample_unit_direction(dy, r);
  s.seed = r.next_seed();
  return s;
}

}  // namespace

ProjectionSet projection_set(std::size_t d_x, std::size_t d_y, std::size_t m, std::uint64_t base_seed) {
  ProjectionSet out;
  for (std::size_t j = 0; j < m; ++j) {
    auto s = make_slice(d_x, d_y, base_seed, j);
    out.dirs_x.push_back(std::move(s.phi));
    out.dirs_y.push_back(std::move(s.psi));
  }
  return out;
}

SlicedResult sliced_mi_detailed(const ScalarMiFn& estimator, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                std::size_t m, Rng& rng, std::size_t threads) {
  if (m < 1) throw std::invalid_argument("sliced_mi: m must be >= 1");
  if (X.rows() != Y.rows()) throw std::invalid_argument("sliced_mi: X and Y row counts differ");
  if (X.rows() < 2) throw std::invalid_argument("sliced_mi: need n >= 2");
  if (X.cols() < 1 || Y.cols() < 1) throw std::invalid_argument("sliced_mi: empty variable");
  const auto dx = static_cast<std::size_t>(X.cols());
  const auto dy = static_cast<std::size_t>(Y.cols());
  const std::uint64_t base = rng.next_seed();
  SlicedResult out;
  out.slices.assign(m, 0.0);

  auto run = [&](std::size_t j) {
    const auto s = make_slice(dx, dy, base, j);
    const Eigen::VectorXd px = X * s.phi;
    const Eigen::VectorXd py = Y * s.psi;
    sim::JointSequence seq{std::vector<double>(px.data(), px.data() + px.size()),
                           std::vector<double>(py.data(), py.data() + py.size())};
    try {
      out.slices[j] = estimator(seq, s.seed);
    } catch (const std::exception& e) {
      throw SliceError(j, e.what());
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, m));
  if (workers == 1) {
    for (std::size_t j = 0; j < m; ++j) run(j);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t j = w; j < m; j += workers) run(j);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  double sum = 0.0;
  for (double v : out.slices) sum += v;
  out.mean = sum / static_cast<double>(m);
  if (m > 1) {
    double ss = 0.0;
    for (double v : out.slices) ss += (v - out.mean) * (v - out.mean);
    out.std_error = std::sqrt(ss / static_cast<double>(m - 1) / static_cast<double>(m));
  }
  return out;
}

double sliced_mi(const ScalarMiFn& estimator, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, std::size_t m,
                 Rng& rng, std::size_t threads) {
  return sliced_mi_detailed(estimator, X, Y, m, rng, threads).mean;
}

}  // namespace infonet::smi
