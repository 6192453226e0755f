#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "infonet/infonet.hpp"
#include "test_support.hpp"

using namespace infonet;
using namespace infonet::net;
namespace fs = std::filesystem;

namespace {

InfoNetConfig tiny_config() {
  InfoNetConfig c;
  c.L = 6;
  c.d_model = 8;
  c.n_latents = 4;
  c.n_cross = 1;
  c.n_self = 1;
  c.n_heads = 2;
  c.fourier_bands = 2;
  c.mlp_ratio = 2;
  c.smooth_ksize = 3;
  c.smooth_sigma = 0.5;
  return c;
}

// Random head so the table is not constant.
InfoNetModel random_model(const InfoNetConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  auto m = InfoNetModel::initialize(cfg, rng);
  for (float& w : m.params().at("head.w").data()) w = static_cast<float>(0.5 * rng.normal());
  return m;
}

copula::RankedSequence ranked(double rho, std::size_t T, Rng& rng) {
  return copula::empirical_copula(infonet::testing::gaussian_sequence(rho, T, rng));
}

template <class Real>
std::vector<Real> unfolded_table(const ad::ParamStore<Real>& params, const InfoNetConfig& cfg,
                                 const copula::RankedSequence& seq) {
  ad::Tape<Real> tape(false);
  ad::BoundParams<Real> p(tape, params, false);
  const auto& t = forward_graph(tape, p, cfg, seq).value();
  return {t.data().begin(), t.data().end()};
}

template <class Real>
std::vector<Real> folded_table(const ad::ParamStore<Real>& params, const InfoNetConfig& cfg,
                               const copula::RankedSequence& seq) {
  const auto cache = build_query_cache(params, cfg);
  ad::Tape<Real> tape(false);
  ad::BoundParams<Real> p(tape, params, false);
  const auto& t = forward_graph(tape, p, cfg, seq, &cache).value();
  return {t.data().begin(), t.data().end()};
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <class Real>
Real el(const ad::Tensor<Real>& t, std::size_t i, std::size_t j) {
  return t[i * t.dim(1) + j];
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("infonet_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

bool same_params(const InfoNetModel& a, const InfoNetModel& b) {
  if (a.params().names() != b.params().names()) return false;
  for (std::size_t k = 0; k < a.params().size(); ++k) {
    if (a.params()[k].shape() != b.params()[k].shape()) return false;
    const auto& x = a.params()[k].data();
    const auto& y = b.params()[k].data();
    if (!std::equal(x.begin(), x.end(), y.begin())) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("infonet") {

TEST_CASE("config defaults and JSON") {
  const InfoNetConfig c;
  CHECK(c.L == 32);
  CHECK(c.feature_dim() == 34);
  CHECK(InfoNetConfig::default_ksize(256) == 15);
  CHECK(InfoNetConfig::default_sigma(256) == doctest::Approx(3.0));
  CHECK(InfoNetConfig::default_ksize(32) == 3);
  CHECK(InfoNetConfig::default_sigma(32) == doctest::Approx(0.375));

  const auto t = tiny_config();
  const auto back = InfoNetConfig::from_json(t.to_json());
  CHECK(back.to_json() == t.to_json());

  auto j = t.to_json();
  j["dropout"] = 0.1;
  CHECK_THROWS_AS(InfoNetConfig::from_json(j), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"stepz", 3}}), std::invalid_argument);
  CHECK(TrainConfig::from_json(TrainConfig{}.to_json()).to_json() == TrainConfig{}.to_json());

  auto bad = t;
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("fresh model estimates exactly zero") {
  Rng rng(1);
  const auto model = InfoNetModel::initialize(InfoNetConfig::with_table_size(16), rng);
  for (int i = 0; i < 5; ++i) {
    const auto seq = infonet::testing::gaussian_sequence(0.8, 200, rng);
    CHECK(estimate_mi(model, seq, rng.next_seed()) == 0.0);
  }
}

TEST_CASE("table is L x L and finite") {
  Rng rng(2);
  const auto cfg = InfoNetConfig::with_table_size(16);
  const auto model = random_model(cfg, 3);
  for (std::size_t T : {2u, 17u, 500u}) {
    const auto tab = forward(model, ranked(0.5, T, rng));
    CHECK(tab.L == 16);
    REQUIRE(tab.values.size() == 256);
    for (double v : tab.values) CHECK(std::isfinite(v));
  }
}

TEST_CASE("table ignores pair order") {
  Rng rng(4);
  const auto cfg = InfoNetConfig::with_table_size(16);
  const auto model = random_model(cfg, 5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto seq = ranked(0.6, 300, rng);
    std::vector<std::size_t> perm(seq.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    copula::RankedSequence shuffled;
    for (std::size_t i : perm) {
      shuffled.us.push_back(seq.us[i]);
      shuffled.vs.push_back(seq.vs[i]);
    }
    const auto a = forward(model, seq), b = forward(model, shuffled);
    CHECK(max_abs_diff(a.values, b.values) <= 1e-5);
  }
}

TEST_CASE("folded decoder matches the unfolded graph") {
  Rng rng(6);
  const auto cfg = InfoNetConfig::with_table_size(16);
  const auto model = random_model(cfg, 7);
  const auto seq = ranked(0.4, 400, rng);

  const auto pd = model.params().cast<double>();
  const auto ud = unfolded_table(pd, cfg, seq), fd = folded_table(pd, cfg, seq);
  CHECK(max_abs_diff(ud, fd) <= 1e-10);

  const auto uf = unfolded_table(model.params(), cfg, seq), ff = folded_table(model.params(), cfg, seq);
  double worst = 0.0;
  for (std::size_t i = 0; i < uf.size(); ++i) worst = std::max(worst, std::abs(double(uf[i]) - double(ff[i])));
  CHECK(worst <= 1e-5);
}

TEST_CASE("pair encoding is per pair") {
  Rng rng(8);
  const auto cfg = tiny_config();
  const auto model = random_model(cfg, 9);
  auto seq = ranked(0.3, 20, rng);
  auto encode = [&](const copula::RankedSequence& s) {
    ad::Tape<float> tape(false);
    ad::BoundParams<float> p(tape, model.params(), false);
    return encode_pairs(p, s, cfg, tape).value();
  };
  const auto a = encode(seq);
  CHECK(a.shape() == ad::Shape{20, cfg.d_model});
  std::swap(seq.us[0], seq.us[5]);
  const auto b = encode(seq);
  for (std::size_t t = 1; t < 20; ++t) {
    if (t == 5) continue;
    for (std::size_t c = 0; c < cfg.d_model; ++c) CHECK(el(a, t, c) == el(b, t, c));
  }

  const auto feats = pair_features<double>(seq, 2);
  CHECK(feats.shape() == ad::Shape{20, 10});
  for (std::size_t t = 0; t < 20; ++t) {
    const double u = seq.us[t], v = seq.vs[t];
    CHECK(el(feats, t, 0) == 2 * u - 1);
    CHECK(el(feats, t, 1) == 2 * v - 1);
    for (std::size_t k = 0; k < 2; ++k) {
      const double f = M_PI * std::pow(2.0, static_cast<double>(k));
      CHECK(el(feats, t, 2 + 4 * k) == doctest::Approx(std::sin(f * u)).scale(1.0).epsilon(1e-12));
      CHECK(el(feats, t, 3 + 4 * k) == doctest::Approx(std::cos(f * u)).scale(1.0).epsilon(1e-12));
      CHECK(el(feats, t, 4 + 4 * k) == doctest::Approx(std::sin(f * v)).scale(1.0).epsilon(1e-12));
      CHECK(el(feats, t, 5 + 4 * k) == doctest::Approx(std::cos(f * v)).scale(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("gaussian smoothing") {
  for (auto [k, s] : {std::pair{3ul, 0.375}, std::pair{15ul, 3.0}, std::pair{5ul, 1.0}}) {
    const auto ker = gaussian_kernel(k, s);
    double sum = 0.0;
    for (double v : ker.data()) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) CHECK(el(ker, i, j) == doctest::Approx(el(ker, k - 1 - i, j)).epsilon(1e-15));
  }
  CHECK_THROWS_AS(gaussian_kernel(4, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_kernel(3, 0.0), std::invalid_argument);

  const auto flat = gaussian_blur_table(dv::DiscriminantTable::constant(10, 2.5), 5, 1.0);
  for (double v : flat.values) CHECK(v == doctest::Approx(2.5).epsilon(1e-14));

  dv::DiscriminantTable impulse = dv::DiscriminantTable::constant(31, 0.0);
  impulse.values[15 * 31 + 15] = 1.0;
  const auto blurred = gaussian_blur_table(impulse, 15, 3.0);
  const auto ker = gaussian_kernel(15, 3.0);
  double total = 0.0;
  for (std::size_t i = 0; i < 31; ++i) {
    for (std::size_t j = 0; j < 31; ++j) {
      total += blurred.at(i, j);
      const bool inside = i >= 8 && i <= 22 && j >= 8 && j <= 22;
      CHECK(blurred.at(i, j) == doctest::Approx(inside ? el(ker, i - 8, j - 8) : 0.0).epsilon(1e-14));
    }
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("batched estimates equal single estimates") {
  Rng rng(10);
  const auto model = random_model(InfoNetConfig::with_table_size(16), 11);
  std::vector<sim::JointSequence> seqs;
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < 6; ++i) {
    seqs.push_back(infonet::testing::gaussian_sequence(0.1 * i, 100 + 50 * i, rng));
    seeds.push_back(rng.next_seed());
  }
  const auto batch = estimate_mi_batch(model, seqs, seeds);
  const Predictor pred(model);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    CHECK(batch[i] == estimate_mi(model, seqs[i], seeds[i]));
    CHECK(batch[i] == pred.estimate(seqs[i], seeds[i]));
    CHECK(estimate_mi(model, seqs[i], seeds[i]) == estimate_mi(model, seqs[i], seeds[i]));
  }
  const auto avg = estimate_mi(model, seqs[0], seeds[0], 4);
  CHECK(std::isfinite(avg));
  CHECK_THROWS_AS(estimate_mi(model, seqs[0], seeds[0], 0), std::invalid_argument);
  CHECK_THROWS_AS(estimate_mi_batch(model, seqs, std::vector<std::uint64_t>{1}), std::invalid_argument);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig tc;
  tc.steps = 100;
  tc.lr = 1e-3;
  CHECK(scheduled_lr(tc, 1) == doctest::Approx(1e-3).epsilon(1e-3));
  CHECK(scheduled_lr(tc, 50) < scheduled_lr(tc, 10));
  CHECK(scheduled_lr(tc, 100) <= 1e-6);
  tc.warmup_steps = 10;
  CHECK(scheduled_lr(tc, 1) == doctest::Approx(1e-4));
  CHECK(scheduled_lr(tc, 5) < scheduled_lr(tc, 10));
}

TEST_CASE("smoke training is finite and deterministic") {
  auto cfg = InfoNetConfig::with_table_size(16);
  TrainConfig tc;
  tc.batch_n = 4;
  tc.T = 256;
  tc.steps = 10;
  tc.seed = 3;
  std::size_t callbacks = 0;
  const auto a = train(cfg, tc, [&](const TrainLogRow& row, const InfoNetModel&) {
    ++callbacks;
    CHECK(row.step == callbacks);
  });
  CHECK(callbacks == 10);
  REQUIRE(a.log.size() == 10);
  for (const auto& row : a.log) {
    CHECK(std::isfinite(row.loss));
    CHECK(row.lr > 0.0);
  }
  // The head moved off zero.
  double head = 0.0;
  for (float w : a.model.params().at("head.w").data()) head += std::abs(w);
  CHECK(head > 0.0);

  const auto b = train(cfg, tc);
  CHECK(same_params(a.model, b.model));
  tc.threads = 2;
  const auto c = train(cfg, tc);
  CHECK(same_params(a.model, c.model));
  for (std::size_t i = 0; i < 10; ++i) CHECK(a.log[i].loss == c.log[i].loss);

  tc.steps = 0;
  CHECK_THROWS_AS(train(cfg, tc), std::invalid_argument);
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto dir = temp_dir("ckpt");
  const auto model = random_model(InfoNetConfig::with_table_size(16), 12);
  const auto path = dir / "m.infonet";
  save_checkpoint(model, path);
  const auto back = load_checkpoint(path);
  CHECK(same_params(model, back));
  CHECK(back.config().to_json() == model.config().to_json());
  Rng rng(13);
  const auto seq = infonet::testing::gaussian_sequence(0.5, 300, rng);
  CHECK(estimate_mi(model, seq, 1) == estimate_mi(back, seq, 1));
  save_checkpoint(back, dir / "again.infonet");
  CHECK(read_bytes(path) == read_bytes(dir / "again.infonet"));

  const auto bytes = read_bytes(path);
  auto magic = bytes;
  magic[0] = 'X';
  write_bytes(dir / "magic.infonet", magic);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "magic.infonet"), doctest::Contains("magic"), FormatError);

  auto version = bytes;
  version[4] = 2;
  write_bytes(dir / "v2.infonet", version);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "v2.infonet"), doctest::Contains("format_version 2"), FormatError);

  for (std::size_t cut : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    write_bytes(dir / "cut.infonet", bytes.substr(0, cut));
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "cut.infonet"), doctest::Contains("offset"), FormatError);
  }
  write_bytes(dir / "tail.infonet", bytes + "x");
  CHECK_THROWS_AS(load_checkpoint(dir / "tail.infonet"), FormatError);
  CHECK_THROWS(load_checkpoint(dir / "missing.infonet"));
  fs::remove_all(dir);
}

TEST_CASE("inference cost grows about linearly in T") {
  const auto model = random_model(InfoNetConfig::with_table_size(32), 14);
  const Predictor pred(model);
  Rng rng(15);
  auto median_time = [&](std::size_t T) {
    const auto seq = infonet::testing::gaussian_sequence(0.5, T, rng);
    std::vector<double> ts;
    for (int r = 0; r < 7; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)pred.estimate(seq, 1);
      ts.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(ts.begin(), ts.begin() + 3, ts.end());
    return ts[3];
  };
  (void)median_time(4000);
  const double t1 = median_time(4000), t2 = median_time(8000);
  MESSAGE("T=4000: " << t1 << " s, T=8000: " << t2 << " s");
  CHECK(t2 / t1 < 3.0);
}

TEST_CASE("end-to-end model gradient matches finite differences") {
  const auto cfg = tiny_config();
  const auto model = random_model(cfg, 16);
  auto params = model.params().cast<double>();
  Rng rng(17);
  const auto seq = ranked(0.7, 24, rng);
  const auto marg = dv::shuffle_marginal(seq.vs, rng);

  auto objective = [&](const ad::ParamStore<double>& ps, ad::ParamStore<double>* grads) {
    ad::Tape<double> tape;
    ad::BoundParams<double> p(tape, ps, grads != nullptr);
    auto table = forward_graph(tape, p, cfg, seq);
    auto obj = dv::dv_objective(table, seq, marg);
    if (grads) {
      tape.backward(obj);
      p.accumulate(*grads);
    }
    return obj.value().item();
  };
  auto analytic = params.zeros_like();
  objective(params, &analytic);

  double global2 = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k)
    for (double g : analytic[k].data()) global2 += g * g;
  const double floor = 1e-3 * std::sqrt(global2);

  const double h = 1e-6;
  double worst = 0.0;
  std::string worst_name;
  for (std::size_t k = 0; k < params.size(); ++k) {
    double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
    for (std::size_t e = 0; e < params[k].size(); ++e) {
      const double keep = params[k][e];
      params[k][e] = keep + h;
      const double up = objective(params, nullptr);
      params[k][e] = keep - h;
      const double down = objective(params, nullptr);
      params[k][e] = keep;
      const double fd = (up - down) / (2 * h), an = analytic[k][e];
      diff2 += (fd - an) * (fd - an);
      fd2 += fd * fd;
      an2 += an * an;
    }
    // Tensors that only shift every cell equally have an exactly zero
    // gradient; the floor keeps finite-difference noise from counting there.
    const double rel = std::sqrt(diff2) / std::max({std::sqrt(fd2), std::sqrt(an2), floor});
    if (rel > worst) {
      worst = rel;
      worst_name = params.names()[k];
    }
  }
  INFO("worst tensor: " << worst_name);
  for (const char* name : {"head.b", "dec.bo", "dec.ln_kv.b"})
    for (double g : analytic.at(name).data()) CHECK(std::abs(g) <= 1e-12);
  CHECK(worst <= 1e-4);
}

}  // TEST_SUITE
