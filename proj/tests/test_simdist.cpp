#include "doctest.h"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "infonet/simdist.hpp"
#include "test_support.hpp"

using namespace infonet;
using namespace infonet::sim;

namespace {

GmmSpec single(double v11, double c, double v22, double m1 = 0.0, double m2 = 0.0) {
  GmmSpec s;
  s.weights = {1.0};
  s.means = {Eigen::Vector2d(m1, m2)};
  Eigen::Matrix2d cov;
  cov << v11, c, c, v22;
  s.covs = {cov};
  return s;
}

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd ca = a.array() - a.mean();
  const Eigen::VectorXd cb = b.array() - b.mean();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("infonet_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("simdist") {

TEST_CASE("sampled specs satisfy their invariants") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const auto spec = sample_gmm_spec(20, 2, rng);
    REQUIRE(spec.components() >= 1);
    REQUIRE(spec.components() <= 20);
    CHECK_NOTHROW(spec.validate());
    double wsum = 0.0;
    for (double w : spec.weights) {
      CHECK(w >= 0.0);
      wsum += w;
    }
    CHECK(std::abs(wsum - 1.0) <= 1e-12);
    for (std::size_t k = 0; k < spec.components(); ++k) {
      for (int i = 0; i < 2; ++i) {
        CHECK(spec.means[k](i) >= -5.0);
        CHECK(spec.means[k](i) <= 5.0);
      }
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spec.covs[k]);
      CHECK(es.eigenvalues().minCoeff() >= 0.01 - 1e-12);
    }
  }
}

TEST_CASE("max_components 1 always gives one component") {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) CHECK(sample_gmm_spec(1, 2, rng).components() == 1);
  CHECK_THROWS_AS(sample_gmm_spec(0, 2, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_gmm_spec(3, 1, rng), std::invalid_argument);
}

TEST_CASE("component counts cover the whole range") {
  Rng rng(4);
  std::vector<int> seen(21, 0);
  for (int i = 0; i < 2000; ++i) seen[sample_gmm_spec(20, 2, rng).components()]++;
  for (int k = 1; k <= 20; ++k) CHECK(seen[k] > 40);
}

TEST_CASE("invalid specs are rejected") {
  auto s = single(1, 0, 1);
  s.weights = {0.9};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  auto t = single(1, 2, 1);  // not positive definite
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("standard normal samples have zero mean and correlation") {
  Rng rng(5);
  const auto seq = sample_joint(single(1, 0, 1), 100000, rng);
  const Eigen::Map<const Eigen::VectorXd> x(seq.xs.data(), seq.size()), y(seq.ys.data(), seq.size());
  CHECK(std::abs(x.mean()) <= 0.02);
  CHECK(std::abs(y.mean()) <= 0.02);
  CHECK(std::abs(corr(x, y)) <= 0.02);
}

TEST_CASE("sample_joint boundary and determinism") {
  Rng rng(6);
  const auto spec = sample_gmm_spec(5, 2, rng);
  Rng a(9), b(9);
  const auto s1 = sample_joint(spec, 50, a);
  const auto s2 = sample_joint(spec, 50, b);
  CHECK(s1.xs == s2.xs);
  CHECK(s1.ys == s2.ys);
  Rng c(1);
  CHECK(sample_joint(spec, 2, c).size() == 2);
}

TEST_CASE("sequence validation") {
  JointSequence s{{1.0}, {2.0}};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = {{1.0, 2.0}, {2.0}};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = {{1.0, NAN}, {2.0, 3.0}};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("analytic Gaussian MI") {
  CHECK(gaussian_mi_analytic(0.0).mi_nats == 0.0);
  CHECK(gaussian_mi_analytic(0.5).mi_nats == doctest::Approx(0.14384).epsilon(1e-4));
  CHECK(gaussian_mi_analytic(0.9).mi_nats == doctest::Approx(0.83024).epsilon(1e-4));
  CHECK(gaussian_mi_analytic(-0.5).mi_nats == gaussian_mi_analytic(0.5).mi_nats);
  CHECK(gaussian_mi_analytic(0.5).method == GtMethod::analytic);
  CHECK_THROWS_AS(gaussian_mi_analytic(1.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_mi_analytic(-1.2), std::invalid_argument);
}

TEST_CASE("log density values") {
  const auto s = single(1, 0, 1);
  const double origin[2] = {0.0, 0.0};
  CHECK(gmm_logpdf(s, origin) == doctest::Approx(-1.83788).epsilon(1e-5));

  GmmSpec twin = s;
  twin.weights = {0.5, 0.5};
  twin.means.push_back(s.means[0]);
  twin.covs.push_back(s.covs[0]);
  const double p[2] = {0.3, -1.2};
  CHECK(gmm_logpdf(twin, p) == doctest::Approx(gmm_logpdf(s, p)).epsilon(1e-14));

  const double far[2] = {100.0, -100.0};
  const double v = gmm_logpdf(s, far);
  CHECK(std::isfinite(v));
  CHECK(v < -9000.0);

  const double bad[3] = {0, 0, 0};
  CHECK_THROWS_AS(gmm_logpdf(s, bad), std::invalid_argument);
}

TEST_CASE("log density integrates to one") {
  Rng rng(7);
  for (int trial = 0; trial < 4; ++trial) {
    const auto spec = sample_gmm_spec(4, 2, rng);
    const GmmDensity dens(spec);
    const int n = 400;
    const double lo = -20.0, h = 40.0 / n;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double pt[2] = {lo + (i + 0.5) * h, lo + (j + 0.5) * h};
        total += std::exp(dens.log_pdf(pt));
      }
    }
    total *= h * h;
    CHECK(std::abs(total - 1.0) <= 0.01);
  }
}

TEST_CASE("marginals slice the covariance and keep weights") {
  const auto [mx, my] = gmm_marginals(single(4, 1, 9));
  CHECK(mx.covs[0](0, 0) == 4.0);
  CHECK(my.covs[0](0, 0) == 9.0);

  Rng rng(8);
  const auto spec = sample_gmm_spec(6, 2, rng);
  const auto [ax, ay] = gmm_marginals(spec);
  CHECK(ax.weights == spec.weights);
  CHECK(ay.weights == spec.weights);

  const auto prod = single(2, 0, 3, 0.5, -1.0);
  const auto [px, py] = gmm_marginals(prod);
  for (int i = 0; i < 20; ++i) {
    const double pt[2] = {rng.normal() * 3, rng.normal() * 3};
    CHECK(gmm_logpdf(prod, pt) ==
          doctest::Approx(gmm_logpdf(px, std::span<const double>(pt, 1)) + gmm_logpdf(py, std::span<const double>(pt + 1, 1)))
              .epsilon(1e-12));
  }
}

TEST_CASE("Monte-Carlo MI of an independent spec is near zero") {
  Rng rng(9);
  GmmSpec s;
  s.weights = {1.0};
  s.means = {Eigen::Vector2d(1.0, -2.0)};
  s.covs = {Eigen::Matrix2d(Eigen::Vector2d(2.0, 0.5).asDiagonal())};
  const auto gt = mci_mi(s, 20000, rng);
  CHECK(gt.method == GtMethod::mci);
  CHECK(std::abs(gt.mi_nats) <= 3.0 * gt.std_error + 1e-12);
}

TEST_CASE("Monte-Carlo MI matches the analytic value at rho 0.6") {
  Rng rng(10);
  const auto gt = mci_mi(single(1, 0.6, 1), 200000, rng);
  CHECK(gt.std_error > 0.0);
  CHECK(std::abs(gt.mi_nats - 0.22314) <= 3.0 * gt.std_error);
}

TEST_CASE("Monte-Carlo standard error shrinks like 1/sqrt(n)") {
  Rng rng(11);
  const auto spec = sample_gmm_spec(5, 2, rng);
  double ratio_sum = 0.0;
  for (int t = 0; t < 20; ++t) {
    const double a = mci_mi(spec, 4000, rng).std_error;
    const double b = mci_mi(spec, 8000, rng).std_error;
    ratio_sum += a / b;
  }
  const double ratio = ratio_sum / 20.0;
  CHECK(ratio >= 1.2);
  CHECK(ratio <= 1.7);
  CHECK_THROWS_AS(mci_mi(spec, 10, rng), std::invalid_argument);
}

TEST_CASE("ground truth uses the closed form for one component") {
  Rng rng(12);
  const auto gt = ground_truth_mi(single(2, 1, 3), 1000, rng);
  CHECK(gt.method == GtMethod::analytic);
  CHECK(gt.mi_nats == doctest::Approx(-0.5 * std::log(1.0 - 1.0 / 6.0)).epsilon(1e-12));
}

TEST_CASE("leveled set honours the tolerance") {
  Rng rng(13);
  const std::vector<double> levels{0.0, 0.3};
  LeveledOptions opt;
  opt.mci_samples = 20000;
  const auto ds = gen_leveled_eval_set(levels, 0.02, 2, 100, rng, opt);
  REQUIRE(ds.records.size() == 4);
  for (const auto& r : ds.records) {
    CHECK(std::abs(r.gt.mi_nats - r.level) <= 0.02);
    CHECK(r.seq.size() == 100);
  }
  Rng again(13);
  const auto ds2 = gen_leveled_eval_set(levels, 0.02, 2, 100, again, opt);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    CHECK(ds.records[i].gt.mi_nats == ds2.records[i].gt.mi_nats);
    CHECK(ds.records[i].seq.xs == ds2.records[i].seq.xs);
  }
}

TEST_CASE("leveled set boundaries and errors") {
  Rng rng(14);
  LeveledOptions opt;
  opt.mci_samples = 20000;
  const std::vector<double> zero{0.0};
  CHECK(gen_leveled_eval_set(zero, 0.02, 1, 50, rng, opt).records.size() == 1);
  const std::vector<double> unsorted{0.5, 0.1};
  CHECK_THROWS_AS(gen_leveled_eval_set(unsorted, 0.02, 1, 50, rng, opt), std::invalid_argument);
  const std::vector<double> far{8.0};
  opt.max_rejections = 20;
  try {
    gen_leveled_eval_set(far, 0.02, 1, 50, rng, opt);
    FAIL("expected GenerationError");
  } catch (const GenerationError& e) {
    CHECK(std::string(e.what()).find("8") != std::string::npos);
  }
}

TEST_CASE("family transforms are strictly increasing") {
  CHECK(std::asinh(0.0) == 0.0);
  CHECK(halfcube(4.0) == doctest::Approx(8.0));
  CHECK(halfcube(-4.0) == doctest::Approx(-8.0));
  double prev_h = -INFINITY, prev_a = -INFINITY;
  for (int i = 0; i < 1000; ++i) {
    const double x = -10.0 + 20.0 * i / 999.0;
    CHECK(halfcube(x) > prev_h);
    CHECK(std::asinh(x) > prev_a);
    prev_h = halfcube(x);
    prev_a = std::asinh(x);
  }
  Rng rng(15);
  const auto seq = infonet::testing::gaussian_sequence(0.5, 10, rng);
  const auto t = transform_family(seq, Family::halfcube);
  for (std::size_t i = 0; i < seq.size(); ++i) CHECK(t.xs[i] == halfcube(seq.xs[i]));
}

TEST_CASE("additive-noise ground truth") {
  // Trapezoid density: each ramp contributes eps/2 to h(Y), the plateau 0.
  for (double eps : {0.05, 0.1, 0.3}) {
    const double oracle = eps - std::log(2.0 * eps);
    CHECK(additive_noise_mi(eps).mi_nats == doctest::Approx(oracle).epsilon(1e-6));
  }
  CHECK_THROWS_AS(additive_noise_mi(0.0), std::invalid_argument);
  Rng rng(16);
  const auto [seq, gt] = sample_additive_noise(0.1, 500, rng);
  CHECK(seq.size() == 500);
  for (std::size_t i = 0; i < seq.size(); ++i) CHECK(std::abs(seq.ys[i] - seq.xs[i]) <= 0.1);
}

TEST_CASE("high-dimensional pairs") {
  Rng rng(17);
  const std::size_t n = 10000, d = 4;
  const auto dep = gen_highdim_pair(HighDimKind::indep_coords, d, n, true, rng);
  const auto ind = gen_highdim_pair(HighDimKind::indep_coords, d, n, false, rng);
  for (std::size_t i = 0; i < d; ++i) {
    CHECK(std::abs(corr(dep.X.col(i), dep.Y.col(i)) - 1.0 / std::numbers::sqrt2) <= 0.05);
    CHECK(std::abs(corr(ind.X.col(i), ind.Y.col(i))) <= 0.05);
  }
  const auto one = gen_highdim_pair(HighDimKind::one_feature, 6, n, true, rng);
  for (Eigen::Index i = 0; i < one.Y.cols(); ++i) {
    const Eigen::VectorXd c = one.Y.col(i).array() - one.Y.col(i).mean();
    CHECK(std::abs(c.squaredNorm() / (n - 1) - 1.0) <= 0.05);
  }
  CHECK_THROWS_AS(gen_highdim_pair(HighDimKind::two_features, 5, 10, true, rng), std::invalid_argument);
  CHECK(highdim_true_mi(HighDimKind::indep_coords, 16, false) == 0.0);
  CHECK(highdim_true_mi(HighDimKind::indep_coords, 2, true) == doctest::Approx(std::numbers::ln2));
  CHECK(to_string(HighDimKind::indep_coords) == "indep_coords");
  CHECK(highdim_kind_from_string("one_feature") == HighDimKind::one_feature);
}

TEST_CASE("dataset round trip") {
  Rng rng(18);
  LeveledOptions opt;
  opt.mci_samples = 20000;
  const std::vector<double> levels{0.1, 0.4};
  const auto ds = gen_leveled_eval_set(levels, 0.02, 2, 64, rng, opt);
  const auto dir = scratch_dir("dataset_rt");
  write_dataset(dir, ds);
  const auto back = read_dataset(dir);
  CHECK(back.T == ds.T);
  CHECK(back.tol == ds.tol);
  CHECK(back.levels == ds.levels);
  REQUIRE(back.records.size() == ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto &a = ds.records[i], &b = back.records[i];
    CHECK(a.id == b.id);
    CHECK(a.family == b.family);
    CHECK(a.components == b.components);
    CHECK(a.level == b.level);
    CHECK(a.gt.mi_nats == b.gt.mi_nats);
    CHECK(a.gt.method == b.gt.method);
    CHECK(a.gt.std_error == b.gt.std_error);
    CHECK(a.seed == b.seed);
    CHECK(a.seq.xs == b.seq.xs);
    CHECK(a.seq.ys == b.seq.ys);
  }
  // Interleaved little-endian layout.
  std::ifstream in(dir / (ds.records[0].id + ".bin"), std::ios::binary);
  double first[2];
  in.read(reinterpret_cast<char*>(first), sizeof first);
  CHECK(first[0] == ds.records[0].seq.xs[0]);
  CHECK(first[1] == ds.records[0].seq.ys[0]);
  CHECK(std::filesystem::file_size(dir / (ds.records[0].id + ".bin")) == 64 * 16);
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed dataset files are reported") {
  const auto dir = scratch_dir("dataset_bad");
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "short.bin", std::ios::binary) << "0123456789";
  }
  CHECK_THROWS_AS(read_sequence_bin(dir / "short.bin"), DatasetError);
  {
    std::ofstream(dir / "manifest.json") << R"({"format_version": 2, "T": 2, "records": []})";
  }
  CHECK_THROWS_WITH_AS(read_dataset(dir), doctest::Contains("format_version 2"), DatasetError);
  {
    std::ofstream(dir / "text.txt") << "# x y\n1 2\n3 4\n\n5 six\n";
  }
  CHECK_THROWS_WITH_AS(read_sequence_text(dir / "text.txt"), doctest::Contains(":5:"), DatasetError);
  {
    std::ofstream(dir / "ok.txt") << "1 2\n3 4\n5 6\n";
  }
  const auto seq = read_sequence_file(dir / "ok.txt");
  CHECK(seq.xs == std::vector<double>{1, 3, 5});
  CHECK(seq.ys == std::vector<double>{2, 4, 6});
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
