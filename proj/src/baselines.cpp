#include "infonet/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <queue>

#include <boost/math/special_functions/digamma.hpp>

#include "infonet/dvcore.hpp"
#include "infonet/ops.hpp"

namespace infonet::baselines {

namespace {

void check_ksg_args(const sim::JointSequence& seq, int k) {
  seq.validate();
  if (k < 1 || static_cast<std::size_t>(k) >= seq.size()) {
    throw std::invalid_argument("ksg_mi: need 1 <= k < T (k=" + std::to_string(k) + ", T=" +
                                std::to_string(seq.size()) + ")");
  }
}

std::vector<double> digamma_table(std::size_t n) {
  std::vector<double> t(n + 1, 0.0);
  for (std::size_t i = 1; i <= n; ++i) t[i] = boost::math::digamma(static_cast<double>(i));
  return t;
}

double cheb(const sim::JointSequence& s, std::size_t a, std::size_t b) {
  return std::max(std::abs(s.xs[a] - s.xs[b]), std::abs(s.ys[a] - s.ys[b]));
}

// k-th smallest max-norm distance to any other point, all pairs.
std::vector<double> knn_radius_brute(const sim::JointSequence& s, int k) {
  const std::size_t T = s.size();
  std::vector<double> eps(T);
  std::vector<double> d;
  d.reserve(T - 1);
  for (std::size_t t = 0; t < T; ++t) {
    d.clear();
    for (std::size_t u = 0; u < T; ++u)
      if (u != t) d.push_back(cheb(s, t, u));
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    eps[t] = d[static_cast<std::size_t>(k - 1)];
  }
  return eps;
}

// Sweep outward in x order; stop once the x gap alone reaches the current
// k-th best distance.
std::vector<double> knn_radius_sorted(const sim::JointSequence& s, int k) {
  const std::size_t T = s.size();
  std::vector<std::size_t> order(T);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.xs[a] < s.xs[b]; });
  std::vector<double> eps(T);
  const auto kk = static_cast<std::size_t>(k);
  std::priority_queue<double> best;
  for (std::size_t pos = 0; pos < T; ++pos) {
    const std::size_t t = order[pos];
    best = {};
    std::size_t lo = pos, hi = pos + 1;
    bool left = lo > 0, right = hi < T;
    while (left || right) {
      if (left) {
        const std::size_t u = order[lo - 1];
        const double gap = s.xs[t] - s.xs[u];
        if (best.size() == kk && gap >= best.top()) {
          left = false;
        } else {
          const double d = cheb(s, t, u);
          if (best.size() < kk) {
            best.push(d);
          } else if (d < best.top()) {
            best.pop();
            best.push(d);
          }
          --lo;
          left = lo > 0;
        }
      }
      if (right) {
        const std::size_t u = order[hi];
        const double gap = s.xs[u] - s.xs[t];
        if (best.size() == kk && gap >= best.top()) {
          right = false;
        } else {
          const double d = cheb(s, t, u);
          if (best.size() < kk) {
            best.push(d);
          } else if (d < best.top()) {
            best.pop();
            best.push(d);
          }
          ++hi;
          right = hi < T;
        }
      }
    }
    eps[t] = best.top();
  }
  return eps;
}

// #{s != t : |v_s - v_t| < eps_t} for every t, all pairs.
std::vector<std::size_t> strict_counts_brute(std::span<const double> v, std::span<const double> eps) {
  const std::size_t T = v.size();
  std::vector<std::size_t> n(T, 0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u < T; ++u)
      if (u != t && std::abs(v[u] - v[t]) < eps[t]) ++n[t];
  return n;
}

// Same counts via binary search on the sorted values. The predicates are
// monotone under rounded subtraction, so the result matches the brute path.
std::vector<std::size_t> strict_counts_sorted(std::span<const double> v, std::span<const double> eps) {
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t T = v.size();
  std::vector<std::size_t> n(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double c = v[t];
    const double e = eps[t];
    auto first = std::partition_point(sorted.begin(), sorted.end(), [&](double s) { return s < c && c - s >= e; });
    auto last = std::partition_point(first, sorted.end(), [&](double s) { return s <= c || s - c < e; });
    // The point itself is always inside (distance 0 < eps when eps > 0).
    n[t] = static_cast<std::size_t>(last - first) - 1;
  }
  return n;
}

sim::JointSequence jitter_if_degenerate(const sim::JointSequence& seq, std::span<const double> eps,
                                        std::uint64_t seed, bool& jittered) {
  jittered = std::any_of(eps.begin(), eps.end(), [](double e) { return e <= 0.0; });
  if (!jittered) return seq;
  sim::JointSequence out = seq;
  Rng rng(seed);
  auto jitter = [&](std::vector<double>& v) {
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    const double range = *mx - *mn;
    const double mag = 1e-10 * (range > 0.0 ? range : 1.0);
    for (double& x : v) x += rng.uniform(-mag, mag);
  };
  jitter(out.xs);
  jitter(out.ys);
  return out;
}

template <class RadiusFn, class CountFn>
double ksg_impl(const sim::JointSequence& input, int k, std::uint64_t seed, RadiusFn radius, CountFn count) {
  check_ksg_args(input, k);
  auto eps = radius(input, k);
  bool jittered = false;
  const sim::JointSequence seq = jitter_if_degenerate(input, eps, seed, jittered);
  if (jittered) {
    eps = radius(seq, k);
    if (std::any_of(eps.begin(), eps.end(), [](double e) { return e <= 0.0; })) {
      throw std::invalid_argument("ksg_mi: zero neighbour radius persists after jitter");
    }
  }
  const std::size_t T = seq.size();
  const auto nx = count(seq.xs, eps);
  const auto ny = count(seq.ys, eps);
  const auto psi = digamma_table(T + 1);
  double acc = 0.0;
  for (std::size_t t = 0; t < T; ++t) acc += psi[nx[t] + 1] + psi[ny[t] + 1];
  return psi[static_cast<std::size_t>(k)] + psi[T] - acc / static_cast<double>(T);
}

double sample_std(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (n - 1.0));
}

}  // namespace

double ksg_mi(const sim::JointSequence& seq, int k, std::uint64_t jitter_seed) {
  return ksg_impl(seq, k, jitter_seed, knn_radius_sorted, strict_counts_sorted);
}

double ksg_mi_bruteforce(const sim::JointSequence& seq, int k, std::uint64_t jitter_seed) {
  return ksg_impl(seq, k, jitter_seed, knn_radius_brute, strict_counts_brute);
}

double silverman_bandwidth(double sigma, std::size_t n, std::size_t d) {
  const double dd = static_cast<double>(d);
  return sigma * std::pow(4.0 / ((dd + 2.0) * static_cast<double>(n)), 1.0 / (dd + 4.0));
}

double kde_mi(const sim::JointSequence& seq) {
  seq.validate();
  const std::size_t T = seq.size();
  if (T < 10) throw std::invalid_argument("kde_mi: need T >= 10");
  const double sx = sample_std(seq.xs);
  const double sy = sample_std(seq.ys);
  if (!(sx > 0.0) || !(sy > 0.0)) throw std::invalid_argument("kde_mi: zero variance in a coordinate");
  const double hx1 = silverman_bandwidth(sx, T, 1), hy1 = silverman_bandwidth(sy, T, 1);
  const double hx2 = silverman_bandwidth(sx, T, 2), hy2 = silverman_bandwidth(sy, T, 2);
  const double ix1 = 1.0 / hx1, iy1 = 1.0 / hy1, ix2 = 1.0 / hx2, iy2 = 1.0 / hy2;
  // Normalising constants: log p_joint - log p_x - log p_y, with the 1/T and
  // 1/sqrt(2 pi) factors collected once.
  const double log_norm = std::log(static_cast<double>(T)) + std::log(hx1 * hy1 / (hx2 * hy2));
  double acc = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    double pj = 0.0, px = 0.0, py = 0.0;
    for (std::size_t u = 0; u < T; ++u) {
      const double dx = seq.xs[t] - seq.xs[u];
      const double dy = seq.ys[t] - seq.ys[u];
      const double ax2 = dx * ix2, ay2 = dy * iy2;
      pj += std::exp(-0.5 * (ax2 * ax2 + ay2 * ay2));
      const double ax1 = dx * ix1, ay1 = dy * iy1;
      px += std::exp(-0.5 * ax1 * ax1);
      py += std::exp(-0.5 * ay1 * ay1);
    }
    acc += std::log(pj) - std::log(px) - std::log(py);
  }
  return acc / static_cast<double>(T) + log_norm;
}

MlpDiscriminant MlpDiscriminant::initialize(std::size_t hidden, Rng& rng) {
  MlpDiscriminant m;
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    ad::Tensor<double> w(ad::Shape{in, out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    ad::Tensor<double> b(ad::Shape{out});
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-bound, bound);
    m.params.add(name + ".w", std::move(w));
    m.params.add(name + ".b", std::move(b));
  };
  dense("l0", 2, hidden);
  dense("l1", hidden, hidden);
  dense("out", hidden, 1);
  return m;
}

namespace {

ad::Var<double> mlp_forward(const ad::BoundParams<double>& p, ad::Var<double> inputs) {
  auto h = ad::relu(ad::add_bias(ad::matmul(inputs, p("l0.w")), p("l0.b")));
  h = ad::relu(ad::add_bias(ad::matmul(h, p("l1.w")), p("l1.b")));
  return ad::add_bias(ad::matmul(h, p("out.w")), p("out.b"));
}

ad::Tensor<double> stack_pairs(std::span<const double> xs, std::span<const double> ys) {
  ad::Tensor<double> t(ad::Shape{xs.size(), 2});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    t[2 * i] = xs[i];
    t[2 * i + 1] = ys[i];
  }
  return t;
}

}  // namespace

std::vector<double> MlpDiscriminant::evaluate(std::span<const double> xs, std::span<const double> ys) const {
  ad::Tape<double> tape(false);
  ad::BoundParams<double> p(tape, params, false);
  auto out = mlp_forward(p, tape.constant(stack_pairs(xs, ys)));
  return std::vector<double>(out.value().data().begin(), out.value().data().end());
}

double mine_mi(const sim::JointSequence& seq, const MineConfig& cfg, Rng& rng) {
  seq.validate();
  const std::size_t T = seq.size();
  if (cfg.iters < 1) throw std::invalid_argument("mine_mi: iters must be >= 1");
  if (cfg.batch < 1 || cfg.batch > T) {
    throw std::invalid_argument("mine_mi: batch " + std::to_string(cfg.batch) + " must be in [1, T=" +
                                std::to_string(T) + "]");
  }
  auto model = MlpDiscriminant::initialize(cfg.hidden, rng);
  auto adam = ad::make_adam_state(model.params);
  ad::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.maximize = true;
  std::vector<std::size_t> pool(T);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  auto draw = [&](std::vector<std::size_t>& idx) {
    // Partial Fisher-Yates: first `batch` entries are a sample without replacement.
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      const auto j = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(i), static_cast<std::int64_t>(T - 1)));
      std::swap(pool[i], pool[j]);
    }
    idx.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg.batch));
  };
  std::vector<std::size_t> ji, mi;
  std::vector<double> bx(cfg.batch), by(cfg.batch), my(cfg.batch);
  const double log_b = std::log(static_cast<double>(cfg.batch));
  for (int it = 0; it < cfg.iters; ++it) {
    draw(ji);
    draw(mi);
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      bx[i] = seq.xs[ji[i]];
      by[i] = seq.ys[ji[i]];
      my[i] = seq.ys[mi[i]];
    }
    ad::Tape<double> tape;
    ad::BoundParams<double> p(tape, model.params, true);
    auto joint = mlp_forward(p, tape.constant(stack_pairs(bx, by)));
    auto marg = mlp_forward(p, tape.constant(stack_pairs(bx, my)));
    auto lse = ad::logsumexp(ad::reshape(marg, ad::Shape{cfg.batch}));
    auto dv = ad::sub(ad::mean(joint), ad::sub(lse, tape.constant(ad::Tensor<double>::scalar(log_b))));
    const double val = dv.value()[0];
    if (!std::isfinite(val)) throw MineDivergence("mine_mi: non-finite loss at iteration " + std::to_string(it));
    tape.backward(dv);
    auto grads = model.params.zeros_like();
    p.accumulate(grads);
    ad::adam_step(model.params, grads, adam, acfg);
  }
  const auto marg_ys = dv::shuffle_marginal(seq.ys, rng);
  const auto joint_vals = model.evaluate(seq.xs, seq.ys);
  const auto marg_vals = model.evaluate(seq.xs, marg_ys);
  const double first = std::accumulate(joint_vals.begin(), joint_vals.end(), 0.0) / static_cast<double>(T);
  const double est = first - dv::log_mean_exp(marg_vals);
  if (!std::isfinite(est)) throw MineDivergence("mine_mi: non-finite final estimate");
  return est;
}

}  // namespace infonet::baselines
