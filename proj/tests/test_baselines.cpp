#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "infonet/baselines.hpp"
#include "test_support.hpp"

using namespace infonet;
using namespace infonet::baselines;

namespace {

double gaussian_mi(double rho) { return -0.5 * std::log(1.0 - rho * rho); }

// psi(n) for positive integers.
double digamma_int(int n) {
  double s = -0.57721566490153286061;
  for (int i = 1; i < n; ++i) s += 1.0 / i;
  return s;
}

// Straight transcription of the KSG-1 estimator for inputs without ties.
double ksg_oracle(const sim::JointSequence& s, int k) {
  const int T = static_cast<int>(s.xs.size());
  double acc = 0.0;
  for (int i = 0; i < T; ++i) {
    std::vector<double> d;
    for (int j = 0; j < T; ++j)
      if (j != i) d.push_back(std::max(std::abs(s.xs[i] - s.xs[j]), std::abs(s.ys[i] - s.ys[j])));
    std::sort(d.begin(), d.end());
    const double eps = d[k - 1];
    int nx = 0, ny = 0;
    for (int j = 0; j < T; ++j) {
      if (j == i) continue;
      nx += std::abs(s.xs[i] - s.xs[j]) < eps;
      ny += std::abs(s.ys[i] - s.ys[j]) < eps;
    }
    acc += digamma_int(nx + 1) + digamma_int(ny + 1);
  }
  return digamma_int(k) + digamma_int(T) - acc / T;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("KSG matches a direct transcription") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto seq = infonet::testing::gaussian_sequence(0.5, 20, rng);
    for (int k : {1, 3, 5}) CHECK(ksg_mi(seq, k) == doctest::Approx(ksg_oracle(seq, k)).epsilon(1e-12));
  }
}

TEST_CASE("KSG tree search equals the all-pairs search") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto T = static_cast<std::size_t>(rng.integer(10, 500));
    const int k = static_cast<int>(rng.integer(1, 8));
    auto seq = infonet::testing::gaussian_sequence(rng.uniform(-0.95, 0.95), T, rng);
    if (trial % 10 == 0) {
      // Repeated values exercise the tie rules.
      for (double& x : seq.xs) x = std::round(x * 4.0) / 4.0;
    }
    CHECK(ksg_mi(seq, k, 7) == ksg_mi_bruteforce(seq, k, 7));
  }
}

TEST_CASE("KSG on Gaussians") {
  Rng rng(3);
  std::vector<double> indep, corr;
  for (int s = 0; s < 50; ++s) {
    indep.push_back(ksg_mi(infonet::testing::gaussian_sequence(0.0, 2000, rng), 5));
    corr.push_back(ksg_mi(infonet::testing::gaussian_sequence(0.5, 2000, rng), 5));
  }
  CHECK(std::abs(mean(indep)) <= 0.01);
  CHECK(std::abs(mean(corr) - gaussian_mi(0.5)) <= 0.03);
}

TEST_CASE("KSG input checks and ties") {
  Rng rng(4);
  const auto seq = infonet::testing::gaussian_sequence(0.3, 50, rng);
  CHECK_THROWS_AS(ksg_mi(seq, 0), std::invalid_argument);
  CHECK_THROWS_AS(ksg_mi(seq, 50), std::invalid_argument);
  sim::JointSequence dup;
  for (int i = 0; i < 40; ++i) {
    dup.xs.push_back(i % 4);
    dup.ys.push_back(i % 4);
  }
  const double v = ksg_mi(dup, 3, 1);
  CHECK(std::isfinite(v));
  CHECK(v == ksg_mi(dup, 3, 1));
}

TEST_CASE("Silverman bandwidth") {
  CHECK(silverman_bandwidth(1.0, 100, 1) == doctest::Approx(std::pow(4.0 / 300.0, 0.2)));
  CHECK(silverman_bandwidth(2.0, 500, 2) == doctest::Approx(2.0 * std::pow(4.0 / 2000.0, 1.0 / 6.0)));
}

TEST_CASE("KDE on Gaussians") {
  Rng rng(5);
  std::vector<double> indep, corr;
  for (int s = 0; s < 5; ++s) {
    indep.push_back(kde_mi(infonet::testing::gaussian_sequence(0.0, 2000, rng)));
    corr.push_back(kde_mi(infonet::testing::gaussian_sequence(0.9, 2000, rng)));
  }
  for (double v : indep) CHECK(std::abs(v) <= 0.1);
  for (double v : corr) CHECK(std::abs(v - gaussian_mi(0.9)) <= 0.15);
}

TEST_CASE("KDE is scale-free and rejects degenerate input") {
  Rng rng(6);
  auto seq = infonet::testing::gaussian_sequence(0.6, 1000, rng);
  const double base = kde_mi(seq);
  auto scaled = seq;
  for (double& x : scaled.xs) x *= 10.0;
  CHECK(std::abs(kde_mi(scaled) - base) < 0.02);

  auto flat = seq;
  std::fill(flat.ys.begin(), flat.ys.end(), 1.0);
  CHECK_THROWS_AS(kde_mi(flat), std::invalid_argument);
  const auto tiny = infonet::testing::gaussian_sequence(0.6, 5, rng);
  CHECK_THROWS_AS(kde_mi(tiny), std::invalid_argument);
}

TEST_CASE("MLP discriminant layout") {
  Rng rng(7);
  const auto mlp = MlpDiscriminant::initialize(64, rng);
  CHECK(mlp.params.at("l0.w").shape() == ad::Shape{2, 64});
  CHECK(mlp.params.at("l1.w").shape() == ad::Shape{64, 64});
  CHECK(mlp.params.at("out.w").shape() == ad::Shape{64, 1});
  const std::vector<double> xs{0.1, 0.5, 0.9}, ys{0.3, 0.2, 0.7};
  const auto th = mlp.evaluate(xs, ys);
  REQUIRE(th.size() == 3);
  for (double t : th) CHECK(std::isfinite(t));
}

TEST_CASE("MINE with the full budget") {
  Rng rng(8);
  MineConfig cfg;
  for (int s = 0; s < 3; ++s) {
    const auto seq = infonet::testing::gaussian_sequence(0.9, 2000, rng);
    CHECK(std::abs(mine_mi(seq, cfg, rng) - gaussian_mi(0.9)) <= 0.2);
    const auto ind = infonet::testing::gaussian_sequence(0.0, 2000, rng);
    CHECK(std::abs(mine_mi(ind, cfg, rng)) <= 0.1);
  }
}

TEST_CASE("MINE with ten steps underestimates") {
  Rng rng(9);
  MineConfig cfg;
  cfg.iters = 10;
  std::vector<double> est;
  for (int s = 0; s < 20; ++s) est.push_back(mine_mi(infonet::testing::gaussian_sequence(0.9, 2000, rng), cfg, rng));
  CHECK(mean(est) < 0.5 * gaussian_mi(0.9));
}

TEST_CASE("MINE is deterministic and validates its config") {
  Rng data(10);
  const auto seq = infonet::testing::gaussian_sequence(0.7, 500, data);
  MineConfig cfg;
  cfg.iters = 50;
  Rng a(5), b(5);
  CHECK(mine_mi(seq, cfg, a) == mine_mi(seq, cfg, b));
  cfg.iters = 0;
  CHECK_THROWS_AS(mine_mi(seq, cfg, a), std::invalid_argument);
  cfg.iters = 10;
  cfg.batch = 501;
  CHECK_THROWS_AS(mine_mi(seq, cfg, a), std::invalid_argument);
}

}  // TEST_SUITE
