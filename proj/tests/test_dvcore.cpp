#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "infonet/dvcore.hpp"
#include "gradcheck_cases.hpp"
#include "test_support.hpp"

using namespace infonet;
using namespace infonet::dv;

namespace {

copula::RankedSequence random_ranked(std::size_t T, Rng& rng) {
  return copula::empirical_copula(infonet::testing::gaussian_sequence(0.5, T, rng));
}

DiscriminantTable random_table(std::size_t L, Rng& rng, double scale = 1.0) {
  DiscriminantTable t;
  t.L = L;
  for (std::size_t i = 0; i < L * L; ++i) t.values.push_back(scale * rng.normal());
  return t;
}

std::vector<double> random_joint(std::size_t L, Rng& rng) {
  std::vector<double> p(L * L);
  double s = 0.0;
  for (double& v : p) {
    v = -std::log(rng.uniform(1e-12, 1.0));  // Dirichlet(1)
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

TEST_SUITE("dvcore") {

TEST_CASE("lookup interpolates between cell centres") {
  DiscriminantTable t{2, {0, 1, 2, 3}};
  CHECK(lookup(t, 0.5, 0.5) == doctest::Approx(1.5));
  CHECK(lookup(t, 0.25, 0.25) == 0.0);
  CHECK(lookup(t, 0.25, 0.75) == 1.0);
  CHECK(lookup(t, 0.75, 0.25) == 2.0);
  CHECK(lookup(t, 0.75, 0.75) == 3.0);
  // Clamped beyond the outer centres.
  CHECK(lookup(t, 0.0, 0.0) == 0.0);
  CHECK(lookup(t, 1.0, 1.0) == 3.0);
  CHECK(lookup(t, -5e-13, 1.0 + 5e-13) == 1.0);
  CHECK_THROWS_AS(lookup(t, -1e-6, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(lookup(t, 0.5, 1.001), std::invalid_argument);

  Rng rng(1);
  const auto c = DiscriminantTable::constant(7, 2.5);
  for (int i = 0; i < 50; ++i) CHECK(lookup(c, rng.uniform(), rng.uniform()) == doctest::Approx(2.5).epsilon(1e-15));

  const auto r = random_table(5, rng);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(lookup(r, (i + 0.5) / 5.0, (j + 0.5) / 5.0) == doctest::Approx(r.at(i, j)));
}

TEST_CASE("lookup is continuous") {
  Rng rng(2);
  const auto t = random_table(6, rng);
  for (int i = 0; i < 200; ++i) {
    const double u = rng.uniform(), v = rng.uniform();
    CHECK(std::abs(lookup(t, u, v) - lookup(t, std::min(1.0, u + 1e-9), v)) < 1e-6);
  }
}

TEST_CASE("table validation") {
  CHECK_THROWS_AS((DiscriminantTable{1, {0.0}}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((DiscriminantTable{2, {0, 1, 2}}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((DiscriminantTable{2, {0, 1, NAN, 2}}.validate()), std::invalid_argument);
}

TEST_CASE("shuffle is a uniform permutation") {
  Rng rng(3);
  const std::vector<double> vs{5, 1, 4, 2, 3, 3};
  auto sh = shuffle_marginal(vs, rng);
  auto a = vs, b = sh;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);

  const std::vector<double> two{0.0, 1.0};
  int swapped = 0;
  for (int i = 0; i < 10000; ++i) swapped += shuffle_marginal(two, rng)[0] == 1.0;
  CHECK(std::abs(swapped / 10000.0 - 0.5) <= 0.02);

  Rng x(7), y(7);
  CHECK(shuffle_marginal(vs, x) == shuffle_marginal(vs, y));
}

TEST_CASE("DV value of a constant table is zero") {
  Rng rng(4);
  const auto joint = random_ranked(100, rng);
  const auto marg = shuffle_marginal(joint.vs, rng);
  for (double c : {-3.0, 0.0, 7.5}) CHECK(dv_value(DiscriminantTable::constant(8, c), joint, marg) == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
}

TEST_CASE("DV value ignores a constant shift") {
  Rng rng(5);
  const auto joint = random_ranked(300, rng);
  const auto marg = shuffle_marginal(joint.vs, rng);
  const auto t = random_table(8, rng);
  auto shifted = t;
  for (double& v : shifted.values) v += 4.2;
  CHECK(std::abs(dv_value(t, joint, marg) - dv_value(shifted, joint, marg)) <= 1e-12);
}

TEST_CASE("DV value stays finite for large entries") {
  Rng rng(6);
  const auto joint = random_ranked(200, rng);
  const auto marg = shuffle_marginal(joint.vs, rng);
  DiscriminantTable t{4, {}};
  for (int i = 0; i < 16; ++i) t.values.push_back(i % 2 ? 50.0 : -50.0);
  CHECK(std::isfinite(dv_value(t, joint, marg)));
  CHECK(log_mean_exp(std::vector<double>{1000.0, 1000.0}) == doctest::Approx(1000.0));
}

TEST_CASE("DV value matches a direct computation") {
  Rng rng(7);
  const auto joint = random_ranked(50, rng);
  const auto marg = shuffle_marginal(joint.vs, rng);
  const auto t = random_table(4, rng);
  double first = 0.0, second = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    first += lookup(t, joint.us[i], joint.vs[i]) / 50.0;
    second += std::exp(lookup(t, joint.us[i], marg[i])) / 50.0;
  }
  CHECK(dv_value(t, joint, marg) == doctest::Approx(first - std::log(second)).epsilon(1e-13));
  CHECK_THROWS_AS(dv_value(t, joint, std::vector<double>(49, 0.5)), std::invalid_argument);
}

TEST_CASE("batch loss identities") {
  Rng rng(8);
  const auto joint = random_ranked(120, rng);
  const auto t = random_table(6, rng);
  Rng a(11), b(11);
  const std::vector<DiscriminantTable> one{t};
  const std::vector<copula::RankedSequence> js{joint};
  CHECK(mi_loss_batch(one, js, a) == dv_value(t, joint, shuffle_marginal(joint.vs, b)));

  const std::vector<DiscriminantTable> consts{DiscriminantTable::constant(6, 1.0), DiscriminantTable::constant(6, -2.0)};
  const std::vector<copula::RankedSequence> two{joint, joint};
  CHECK(mi_loss_batch(consts, two, rng) == doctest::Approx(0.0).epsilon(1e-14));

  // A table that depends on the x-bin only makes the shuffle irrelevant.
  DiscriminantTable rows{6, {}};
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) rows.values.push_back(static_cast<double>(i) * 0.3);
  const std::vector<DiscriminantTable> pair{rows, rows};
  Rng c(3), d(4);
  CHECK(mi_loss_batch(pair, two, c) == doctest::Approx(mi_loss_batch(std::vector<DiscriminantTable>{rows}, js, d)).epsilon(1e-14));

  CHECK_THROWS_AS(mi_loss_batch(one, two, rng), std::invalid_argument);
}

TEST_CASE("optimal discrete table") {
  const std::vector<double> p{0.4, 0.1, 0.1, 0.4};
  const auto opt = optimal_table_discrete(2, p);
  const double oracle = 2 * 0.4 * std::log(1.6) + 2 * 0.1 * std::log(0.4);
  CHECK(opt.exact_mi == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(opt.exact_mi == doctest::Approx(0.19274).epsilon(1e-4));
  CHECK(std::abs(expected_dv_value(opt.table, p) - opt.exact_mi) <= 1e-10);

  const std::vector<double> a{0.2, 0.5, 0.3}, b{0.6, 0.1, 0.3};
  std::vector<double> prod;
  for (double x : a)
    for (double y : b) prod.push_back(x * y);
  const auto ind = optimal_table_discrete(3, prod);
  CHECK(std::abs(ind.exact_mi) <= 1e-15);
  for (double v : ind.table.values) CHECK(std::abs(v) <= 1e-14);

  const std::vector<double> zeros{0.5, 0.0, 0.0, 0.5};
  const auto z = optimal_table_discrete(2, zeros);
  CHECK(z.table.at(0, 1) == kZeroCellSentinel);
  CHECK(z.exact_mi == doctest::Approx(std::log(2.0)));

  CHECK_THROWS_AS(optimal_table_discrete(2, std::vector<double>{0.5, 0.5, 0.5, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(optimal_table_discrete(2, std::vector<double>{1.2, -0.2, 0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(optimal_table_discrete(2, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("DV bound holds for perturbed tables") {
  Rng rng(9);
  for (int j = 0; j < 20; ++j) {
    const auto p = random_joint(8, rng);
    const auto opt = optimal_table_discrete(8, p);
    CHECK(std::abs(expected_dv_value(opt.table, p) - opt.exact_mi) <= 1e-10);
    for (int k = 0; k < 20; ++k) {
      auto t = opt.table;
      for (double& v : t.values) v += 0.5 * rng.normal();
      CHECK(expected_dv_value(t, p) <= opt.exact_mi + 1e-9);
    }
    auto shifted = opt.table;
    for (double& v : shifted.values) v -= 3.0;
    CHECK(std::abs(expected_dv_value(shifted, p) - opt.exact_mi) <= 1e-10);
  }
}

TEST_CASE("differentiable objective agrees with the plain value") {
  Rng rng(10);
  const auto joint = random_ranked(80, rng);
  const auto marg = shuffle_marginal(joint.vs, rng);
  const auto t = random_table(5, rng);
  ad::Tape<double> tape(false);
  auto var = tape.constant(ad::Tensor<double>({5, 5}, t.values));
  CHECK(dv_objective(var, joint, marg).value().item() == doctest::Approx(dv_value(t, joint, marg)).epsilon(1e-13));
}

TEST_CASE("batch loss gradient matches finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) CHECK(infonet::testing::mi_loss_batch_grad_error(3, 5, 60, rng) <= 1e-4);
}

}  // TEST_SUITE
