#include "infonet/infonet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <set>
#include <thread>

namespace infonet::net {

namespace {

using ad::Shape;
using ad::Tensor;
using ad::Var;

std::string block_prefix_cross(std::size_t c) { return "cross" + std::to_string(c) + "."; }
std::string block_prefix_self(std::size_t c, std::size_t s) {
  return "self" + std::to_string(c) + "_" + std::to_string(s) + ".";
}

void attention_layout(std::vector<std::pair<std::string, Shape>>& out, const std::string& pre, std::size_t d) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) out.emplace_back(pre + w, Shape{d, d});
  out.emplace_back(pre + "bo", Shape{d});
}

void mlp_layout(std::vector<std::pair<std::string, Shape>>& out, const std::string& pre, std::size_t d,
                std::size_t hidden) {
  out.emplace_back(pre + "ln_mlp.g", Shape{d});
  out.emplace_back(pre + "ln_mlp.b", Shape{d});
  out.emplace_back(pre + "w1", Shape{d, hidden});
  out.emplace_back(pre + "b1", Shape{hidden});
  out.emplace_back(pre + "w2", Shape{hidden, d});
  out.emplace_back(pre + "b2", Shape{d});
}

template <class Real>
Var<Real> linear(Var<Real> x, Var<Real> w, Var<Real> b) {
  return ad::add_bias(ad::matmul(x, w), b);
}

template <class Real>
Var<Real> project_heads(Var<Real> x, Var<Real> w, std::size_t heads) {
  return ad::split_heads(ad::matmul(x, w), heads);
}

// Scaled query heads [H x n x dh].
template <class Real>
Var<Real> query_heads(Var<Real> x, Var<Real> wq, std::size_t heads, std::size_t d_model) {
  const Real s = Real(1) / std::sqrt(static_cast<Real>(d_model / heads));
  return ad::scale(project_heads(x, wq, heads), s);
}

// Multi-head attention with precomputed query heads.
template <class Real>
Var<Real> attend(const ad::BoundParams<Real>& p, const std::string& pre, Var<Real> q_heads, Var<Real> kv,
                 std::size_t heads) {
  auto k = project_heads(kv, p(pre + "wk"), heads);
  auto v = project_heads(kv, p(pre + "wv"), heads);
  auto scores = ad::batched_matmul(q_heads, k, true);
  auto o = ad::batched_matmul(ad::softmax(scores), v);
  return linear(ad::merge_heads(o), p(pre + "wo"), p(pre + "bo"));
}

template <class Real>
Var<Real> mlp_residual(const ad::BoundParams<Real>& p, const std::string& pre, Var<Real> x) {
  auto h = ad::layer_norm(x, p(pre + "ln_mlp.g"), p(pre + "ln_mlp.b"));
  h = ad::gelu(linear(h, p(pre + "w1"), p(pre + "b1")));
  return ad::add(x, linear(h, p(pre + "w2"), p(pre + "b2")));
}

template <class Real>
Var<Real> latent_query_expr(const ad::BoundParams<Real>& p, const InfoNetConfig& cfg) {
  const std::string pre = block_prefix_cross(0);
  auto q_in = ad::layer_norm(p("latents"), p(pre + "ln_q.g"), p(pre + "ln_q.b"));
  return query_heads(q_in, p(pre + "wq"), cfg.n_heads, cfg.d_model);
}

template <class Real>
Var<Real> cell_query_expr(const ad::BoundParams<Real>& p, const InfoNetConfig& cfg) {
  auto q_in = ad::layer_norm(p("cells"), p("dec.ln_q.g"), p("dec.ln_q.b"));
  return query_heads(q_in, p("dec.wq"), cfg.n_heads, cfg.d_model);
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("InfoNetConfig: " + msg);
}

}  // namespace

// ---------------------------------------------------------------- config

std::size_t InfoNetConfig::default_ksize(std::size_t L) {
  auto k = static_cast<std::size_t>(std::llround(15.0 * static_cast<double>(L) / 256.0));
  k = std::max<std::size_t>(3, k);
  if (k % 2 == 0) ++k;
  return k;
}

double InfoNetConfig::default_sigma(std::size_t L) { return 3.0 * static_cast<double>(L) / 256.0; }

InfoNetConfig InfoNetConfig::with_table_size(std::size_t L) {
  InfoNetConfig c;
  c.L = L;
  c.smooth_ksize = default_ksize(L);
  c.smooth_sigma = default_sigma(L);
  return c;
}

void InfoNetConfig::validate() const {
  require(L >= 2, "L must be >= 2");
  require(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(n_latents >= 1, "n_latents must be >= 1");
  require(n_cross >= 1, "n_cross must be >= 1");
  require(mlp_ratio >= 1, "mlp_ratio must be >= 1");
  require(fourier_bands <= 30, "fourier_bands must be <= 30");
  require(smooth_ksize % 2 == 1 && smooth_ksize <= L, "smooth_ksize must be odd and <= L");
  require(smooth_sigma > 0.0 && std::isfinite(smooth_sigma), "smooth_sigma must be positive");
}

nlohmann::json InfoNetConfig::to_json() const {
  return nlohmann::json{{"L", L},
                        {"d_model", d_model},
                        {"n_latents", n_latents},
                        {"n_cross", n_cross},
                        {"n_self", n_self},
                        {"n_heads", n_heads},
                        {"fourier_bands", fourier_bands},
                        {"mlp_ratio", mlp_ratio},
                        {"smooth_ksize", smooth_ksize},
                        {"smooth_sigma", smooth_sigma}};
}

InfoNetConfig InfoNetConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("InfoNetConfig: expected a JSON object");
  static const std::set<std::string> known{"L",         "d_model",       "n_latents", "n_cross",      "n_self",
                                           "n_heads",   "fourier_bands", "mlp_ratio", "smooth_ksize", "smooth_sigma"};
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw std::invalid_argument("InfoNetConfig: unknown key '" + k + "'");
  }
  InfoNetConfig c = with_table_size(j.value("L", std::size_t{32}));
  c.d_model = j.value("d_model", c.d_model);
  c.n_latents = j.value("n_latents", c.n_latents);
  c.n_cross = j.value("n_cross", c.n_cross);
  c.n_self = j.value("n_self", c.n_self);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.fourier_bands = j.value("fourier_bands", c.fourier_bands);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.smooth_ksize = j.value("smooth_ksize", c.smooth_ksize);
  c.smooth_sigma = j.value("smooth_sigma", c.smooth_sigma);
  c.validate();
  return c;
}

// ---------------------------------------------------------------- parameters

std::vector<std::pair<std::string, Shape>> parameter_layout(const InfoNetConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t hidden = cfg.mlp_ratio * d;
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("embed.w", Shape{cfg.feature_dim(), d});
  out.emplace_back("embed.b", Shape{d});
  out.emplace_back("latents", Shape{cfg.n_latents, d});
  for (std::size_t c = 0; c < cfg.n_cross; ++c) {
    const auto pre = block_prefix_cross(c);
    for (const char* ln : {"ln_q.g", "ln_q.b", "ln_kv.g", "ln_kv.b"}) out.emplace_back(pre + ln, Shape{d});
    attention_layout(out, pre, d);
    mlp_layout(out, pre, d, hidden);
    for (std::size_t s = 0; s < cfg.n_self; ++s) {
      const auto spre = block_prefix_self(c, s);
      out.emplace_back(spre + "ln.g", Shape{d});
      out.emplace_back(spre + "ln.b", Shape{d});
      attention_layout(out, spre, d);
      mlp_layout(out, spre, d, hidden);
    }
  }
  out.emplace_back("cells", Shape{cfg.L * cfg.L, d});
  for (const char* ln : {"dec.ln_q.g", "dec.ln_q.b", "dec.ln_kv.g", "dec.ln_kv.b"}) out.emplace_back(ln, Shape{d});
  attention_layout(out, "dec.", d);
  out.emplace_back("head.w", Shape{d, 1});
  out.emplace_back("head.b", Shape{1});
  return out;
}

InfoNetModel::InfoNetModel(InfoNetConfig config, ad::ParamStore<float> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) {
    throw std::invalid_argument("InfoNetModel: expected " + std::to_string(layout.size()) + " tensors, got " +
                                std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params_.names()[i] != layout[i].first || params_[i].shape() != layout[i].second) {
      throw std::invalid_argument("InfoNetModel: tensor " + std::to_string(i) + " is " + params_.names()[i] + " " +
                                  ad::shape_str(params_[i].shape()) + ", expected " + layout[i].first + " " +
                                  ad::shape_str(layout[i].second));
    }
  }
}

InfoNetModel InfoNetModel::initialize(const InfoNetConfig& config, Rng& rng) {
  config.validate();
  ad::ParamStore<float> store;
  auto fill_normal = [&](Tensor<float>& t, double std) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(std * rng.normal());
  };
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (const auto& [name, shape] : parameter_layout(config)) {
    Tensor<float> t(shape);
    if (name == "latents") {
      fill_normal(t, 1.0);
    } else if (name == "cells") {
      // Smooth start: cell-centre Fourier features through a random map, so
      // neighbouring cells begin with similar queries.
      const std::size_t L = config.L;
      const std::size_t nb = config.fourier_bands;
      Tensor<double> proj(Shape{config.feature_dim(), config.d_model});
      for (std::size_t i = 0; i < proj.size(); ++i) proj[i] = rng.normal() / std::sqrt(double(config.feature_dim()));
      copula::RankedSequence centres;
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) {
          centres.us.push_back((static_cast<double>(i) + 0.5) / static_cast<double>(L));
          centres.vs.push_back((static_cast<double>(j) + 0.5) / static_cast<double>(L));
        }
      const auto feats = pair_features<double>(centres, nb);
      const std::size_t F = config.feature_dim();
      for (std::size_t r = 0; r < L * L; ++r)
        for (std::size_t c = 0; c < config.d_model; ++c) {
          double acc = 0.0;
          for (std::size_t f = 0; f < F; ++f) acc += feats[r * F + f] * proj[f * config.d_model + c];
          t[r * config.d_model + c] = static_cast<float>(acc);
        }
    } else if (name == "head.w" || name == "head.b") {
      t.fill(0.0f);
    } else if (ends_with(name, ".g")) {
      t.fill(1.0f);
    } else if (shape.size() == 2) {
      double std = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      if (ends_with(name, "wo") || ends_with(name, "w2")) std *= 0.5;
      fill_normal(t, std);
    } else {
      t.fill(0.0f);
    }
    store.add(name, std::move(t));
  }
  return InfoNetModel(config, std::move(store));
}

// ---------------------------------------------------------------- forward

template <class Real>
Tensor<Real> pair_features(const copula::RankedSequence& seq, std::size_t bands) {
  const std::size_t T = seq.size();
  if (seq.vs.size() != T) throw std::invalid_argument("pair_features: us/vs length mismatch");
  const std::size_t F = 2 + 4 * bands;
  auto out = Tensor<Real>::uninitialized(Shape{T, F});
  for (std::size_t t = 0; t < T; ++t) {
    Real* row = out.ptr() + t * F;
    const double u = seq.us[t];
    const double v = seq.vs[t];
    row[0] = static_cast<Real>(2.0 * u - 1.0);
    row[1] = static_cast<Real>(2.0 * v - 1.0);
    // Higher bands by angle doubling.
    double su = std::sin(std::numbers::pi * u), cu = std::cos(std::numbers::pi * u);
    double sv = std::sin(std::numbers::pi * v), cv = std::cos(std::numbers::pi * v);
    for (std::size_t k = 0; k < bands; ++k) {
      row[2 + 4 * k + 0] = static_cast<Real>(su);
      row[2 + 4 * k + 1] = static_cast<Real>(cu);
      row[2 + 4 * k + 2] = static_cast<Real>(sv);
      row[2 + 4 * k + 3] = static_cast<Real>(cv);
      const double su2 = 2.0 * su * cu, cu2 = (cu - su) * (cu + su);
      const double sv2 = 2.0 * sv * cv, cv2 = (cv - sv) * (cv + sv);
      su = su2, cu = cu2, sv = sv2, cv = cv2;
    }
  }
  return out;
}

template <class Real>
Var<Real> encode_pairs(const ad::BoundParams<Real>& p, const copula::RankedSequence& seq, const InfoNetConfig& cfg,
                       ad::Tape<Real>& tape) {
  if (seq.size() < 2) throw std::invalid_argument("encode_pairs: need T >= 2");
  auto feats = tape.constant(pair_features<Real>(seq, cfg.fourier_bands));
  return linear(feats, p("embed.w"), p("embed.b"));
}

template <class Real>
QueryCache<Real> build_query_cache(const ad::ParamStore<Real>& params, const InfoNetConfig& cfg) {
  ad::Tape<Real> tape(false);
  ad::BoundParams<Real> p(tape, params, false);
  QueryCache<Real> cache;
  cache.latent_queries = latent_query_expr(p, cfg).value();
  cache.cell_queries = cell_query_expr(p, cfg).value();
  const std::size_t H = cfg.n_heads, dh = cfg.d_model / H;
  auto fold = ad::matmul(p("dec.wo"), p("head.w"));  // d_model x 1
  cache.value_head = ad::reshape(fold, Shape{H, dh, 1}).value();
  auto offset = ad::add_bias(ad::matmul(p("cells"), p("head.w")), p("head.b"));
  auto bo_term = ad::matmul(ad::reshape(p("dec.bo"), Shape{1, cfg.d_model}), p("head.w"));  // 1 x 1
  const Real shift = bo_term.value()[0];
  cache.cell_offset = Tensor<Real>(Shape{cfg.L * cfg.L});
  for (std::size_t i = 0; i < cfg.L * cfg.L; ++i) cache.cell_offset[i] = offset.value()[i] + shift;
  return cache;
}

template <class Real>
Var<Real> forward_graph(ad::Tape<Real>& tape, const ad::BoundParams<Real>& p, const InfoNetConfig& cfg,
                        const copula::RankedSequence& seq, const QueryCache<Real>* cache) {
  const std::size_t H = cfg.n_heads;
  auto tokens = encode_pairs(p, seq, cfg, tape);
  auto lat = p("latents");
  for (std::size_t c = 0; c < cfg.n_cross; ++c) {
    const auto pre = block_prefix_cross(c);
    Var<Real> q;
    if (c == 0) {
      q = cache ? tape.constant(cache->latent_queries) : latent_query_expr(p, cfg);
    } else {
      q = query_heads(ad::layer_norm(lat, p(pre + "ln_q.g"), p(pre + "ln_q.b")), p(pre + "wq"), H, cfg.d_model);
    }
    auto kv = ad::layer_norm(tokens, p(pre + "ln_kv.g"), p(pre + "ln_kv.b"));
    lat = ad::add(lat, attend(p, pre, q, kv, H));
    lat = mlp_residual(p, pre, lat);
    for (std::size_t s = 0; s < cfg.n_self; ++s) {
      const auto spre = block_prefix_self(c, s);
      auto x = ad::layer_norm(lat, p(spre + "ln.g"), p(spre + "ln.b"));
      auto sq = query_heads(x, p(spre + "wq"), H, cfg.d_model);
      lat = ad::add(lat, attend(p, spre, sq, x, H));
      lat = mlp_residual(p, spre, lat);
    }
  }
  auto lat_n = ad::layer_norm(lat, p("dec.ln_kv.g"), p("dec.ln_kv.b"));
  Var<Real> table;
  if (cache) {
    auto k = project_heads(lat_n, p("dec.wk"), H);
    auto v = project_heads(lat_n, p("dec.wv"), H);
    auto z = ad::batched_matmul(v, tape.constant(cache->value_head));  // H x n_latents x 1
    auto probs = ad::softmax(ad::batched_matmul(tape.constant(cache->cell_queries), k, true));
    auto per_head = ad::reshape(ad::batched_matmul(probs, z), Shape{H, cfg.L * cfg.L});
    Tensor<Real> ones(Shape{1, H});
    ones.fill(Real(1));
    auto summed = ad::reshape(ad::matmul(tape.constant(std::move(ones)), per_head), Shape{cfg.L * cfg.L});
    table = ad::reshape(ad::add(summed, tape.constant(cache->cell_offset)), Shape{cfg.L, cfg.L});
  } else {
    auto cq = cell_query_expr(p, cfg);
    auto out = ad::add(p("cells"), attend(p, "dec.", cq, lat_n, H));
    table = ad::reshape(linear(out, p("head.w"), p("head.b")), Shape{cfg.L, cfg.L});
  }
  const auto kernel = gaussian_kernel(cfg.smooth_ksize, cfg.smooth_sigma).template cast<Real>();
  return ad::conv2d_fixed(table, kernel);
}

namespace {

dv::DiscriminantTable to_table(const Tensor<float>& t, std::size_t L) {
  dv::DiscriminantTable out;
  out.L = L;
  out.values.assign(t.data().begin(), t.data().end());
  return out;
}

// Forward buffers of a few hundred KiB are allocated and freed on every call;
// served by mmap they cost a page fault per page. Keep them on the heap.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

}  // namespace

Predictor::Predictor(const InfoNetModel& model)
    : model_(&model), cache_(build_query_cache(model.params(), model.config())) {
  keep_large_blocks_on_heap();
}

dv::DiscriminantTable Predictor::table(const copula::RankedSequence& seq) const {
  ad::Tape<float> tape(false);
  ad::BoundParams<float> p(tape, model_->params(), false);
  auto table = forward_graph(tape, p, model_->config(), seq, &cache_);
  return to_table(table.value(), model_->config().L);
}

double Predictor::estimate(const sim::JointSequence& seq, std::uint64_t seed, std::size_t shuffles) const {
  if (shuffles < 1) throw std::invalid_argument("estimate_mi: shuffles must be >= 1");
  const auto ranked = copula::empirical_copula(seq);
  const auto tab = table(ranked);
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t s = 0; s < shuffles; ++s) {
    const auto marg = dv::shuffle_marginal(ranked.vs, rng);
    total += dv::dv_value(tab, ranked, marg);
  }
  return total / static_cast<double>(shuffles);
}

dv::DiscriminantTable forward(const InfoNetModel& model, const copula::RankedSequence& seq) {
  return Predictor(model).table(seq);
}

ad::Tensor<double> gaussian_kernel(std::size_t ksize, double sigma) {
  if (ksize % 2 == 0) throw std::invalid_argument("gaussian_kernel: ksize must be odd, got " + std::to_string(ksize));
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  const auto r = static_cast<long>(ksize / 2);
  std::vector<double> g1(ksize);
  double s = 0.0;
  for (long i = -r; i <= r; ++i) {
    g1[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    s += g1[static_cast<std::size_t>(i + r)];
  }
  for (double& v : g1) v /= s;
  Tensor<double> k(Shape{ksize, ksize});
  for (std::size_t i = 0; i < ksize; ++i)
    for (std::size_t j = 0; j < ksize; ++j) k[i * ksize + j] = g1[i] * g1[j];
  return k;
}

dv::DiscriminantTable gaussian_blur_table(const dv::DiscriminantTable& table, std::size_t ksize, double sigma) {
  table.validate();
  if (ksize > table.L) {
    throw std::invalid_argument("gaussian_blur_table: ksize " + std::to_string(ksize) + " exceeds L " +
                                std::to_string(table.L));
  }
  const auto kernel = gaussian_kernel(ksize, sigma);
  ad::Tape<double> tape(false);
  auto x = tape.constant(Tensor<double>(Shape{table.L, table.L}, table.values));
  auto y = ad::conv2d_fixed(x, kernel);
  return dv::DiscriminantTable{table.L, std::vector<double>(y.value().data().begin(), y.value().data().end())};
}

// ---------------------------------------------------------------- training

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{{"batch_n", batch_n},
                        {"T", T},
                        {"steps", steps},
                        {"lr", lr},
                        {"seed", seed},
                        {"max_components", max_components},
                        {"warmup_steps", warmup_steps},
                        {"clip_grad_norm", clip_grad_norm},
                        {"threads", threads}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("TrainConfig: expected a JSON object");
  static const std::set<std::string> known{"batch_n",      "T",           "steps",          "lr",     "seed",
                                           "max_components", "warmup_steps", "clip_grad_norm", "threads"};
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw std::invalid_argument("TrainConfig: unknown key '" + k + "'");
  }
  TrainConfig c;
  c.batch_n = j.value("batch_n", c.batch_n);
  c.T = j.value("T", c.T);
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  c.max_components = j.value("max_components", c.max_components);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.clip_grad_norm = j.value("clip_grad_norm", c.clip_grad_norm);
  c.threads = j.value("threads", c.threads);
  return c;
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step) {
  if (step < 1) step = 1;
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const double span = static_cast<double>(std::max<std::size_t>(1, cfg.steps - std::min(cfg.steps, cfg.warmup_steps)));
  const double pos = static_cast<double>(step - 1 - std::min(step - 1, cfg.warmup_steps)) / span;
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, pos)));
}

namespace {

struct ItemResult {
  double loss = 0.0;
  ad::ParamStore<float> grads;
};

ItemResult train_item(const InfoNetModel& model, const copula::RankedSequence& ranked, std::span<const double> marg,
                      float inv_n) {
  ad::Tape<float> tape;
  ad::BoundParams<float> p(tape, model.params(), true);
  auto table = forward_graph(tape, p, model.config(), ranked);
  auto j = dv::dv_objective(table, ranked, marg);
  auto scaled = ad::scale(j, inv_n);
  tape.backward(scaled);
  ItemResult r;
  r.loss = static_cast<double>(j.value()[0]);
  r.grads = model.params().zeros_like();
  p.accumulate(r.grads);
  return r;
}

}  // namespace

TrainResult train(const InfoNetConfig& config, const TrainConfig& tc, const TrainCallback& on_step) {
  if (tc.steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (tc.batch_n < 1) throw std::invalid_argument("train: batch_n must be >= 1");
  if (tc.T < 2) throw std::invalid_argument("train: T must be >= 2");
  if (tc.max_components < 1) throw std::invalid_argument("train: max_components must be >= 1");
  keep_large_blocks_on_heap();
  const Rng root(tc.seed);
  Rng init_rng = root.split(0);
  TrainResult result{InfoNetModel::initialize(config, init_rng), {}};
  auto& model = result.model;
  auto adam = ad::make_adam_state(model.params());
  ad::AdamConfig acfg;
  acfg.maximize = true;
  const std::size_t workers = std::max<std::size_t>(1, std::min(tc.threads, tc.batch_n));
  const float inv_n = 1.0f / static_cast<float>(tc.batch_n);
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t step = 1; step <= tc.steps; ++step) {
    const Rng step_rng = root.split(step);
    std::vector<copula::RankedSequence> ranked(tc.batch_n);
    std::vector<std::vector<double>> margs(tc.batch_n);
    for (std::size_t i = 0; i < tc.batch_n; ++i) {
      Rng item = step_rng.split(i);
      const auto spec = sim::sample_gmm_spec(tc.max_components, 2, item);
      ranked[i] = copula::empirical_copula(sim::sample_joint(spec, tc.T, item));
      margs[i] = dv::shuffle_marginal(ranked[i].vs, item);
    }

    std::vector<ItemResult> items(tc.batch_n);
    if (workers == 1) {
      for (std::size_t i = 0; i < tc.batch_n; ++i) items[i] = train_item(model, ranked[i], margs[i], inv_n);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(workers);
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t i = w; i < tc.batch_n; i += workers)
              items[i] = train_item(model, ranked[i], margs[i], inv_n);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }

    // Fixed reduction order keeps results independent of the worker count.
    auto grads = model.params().zeros_like();
    double loss = 0.0;
    for (std::size_t i = 0; i < tc.batch_n; ++i) {
      loss += items[i].loss;
      for (std::size_t k = 0; k < grads.size(); ++k) {
        float* g = grads[k].ptr();
        const float* gi = items[i].grads[k].ptr();
        for (std::size_t e = 0; e < grads[k].size(); ++e) g[e] += gi[e];
      }
    }
    loss /= static_cast<double>(tc.batch_n);
    if (!std::isfinite(loss)) {
      throw TrainingError("train: non-finite loss at step " + std::to_string(step) + " (seed " +
                          std::to_string(tc.seed) + ")");
    }
    if (tc.clip_grad_norm > 0.0) {
      double sq = 0.0;
      for (std::size_t k = 0; k < grads.size(); ++k)
        for (float g : grads[k].data()) sq += static_cast<double>(g) * g;
      const double norm = std::sqrt(sq);
      if (norm > tc.clip_grad_norm) {
        const auto f = static_cast<float>(tc.clip_grad_norm / norm);
        for (std::size_t k = 0; k < grads.size(); ++k)
          for (float& g : grads[k].data()) g *= f;
      }
    }
    acfg.lr = scheduled_lr(tc, step);
    ad::adam_step(model.params(), grads, adam, acfg);

    TrainLogRow row;
    row.step = step;
    row.loss = loss;
    row.lr = acfg.lr;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(row);
    if (on_step) on_step(row, model);
  }
  return result;
}

// ---------------------------------------------------------------- estimation

double estimate_mi(const InfoNetModel& model, const sim::JointSequence& seq, std::uint64_t seed,
                   std::size_t shuffles) {
  return Predictor(model).estimate(seq, seed, shuffles);
}

std::vector<double> estimate_mi_batch(const InfoNetModel& model, std::span<const sim::JointSequence> seqs,
                                      std::span<const std::uint64_t> seeds, std::size_t shuffles) {
  if (seqs.size() != seeds.size()) {
    throw std::invalid_argument("estimate_mi_batch: " + std::to_string(seqs.size()) + " sequences vs " +
                                std::to_string(seeds.size()) + " seeds");
  }
  const Predictor predictor(model);
  std::vector<double> out;
  out.reserve(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) out.push_back(predictor.estimate(seqs[i], seeds[i], shuffles));
  return out;
}

// ---------------------------------------------------------------- checkpoint

namespace {

void put_u8(std::string& b, std::uint8_t v) { b.push_back(static_cast<char>(v)); }
void put_u16(std::string& b, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) put_u8(b, static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) put_u8(b, static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : b_(std::move(bytes)) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

  const char* take(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at offset " + std::to_string(pos_) + " reading " + what);
    }
    const char* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t uint(std::size_t n, const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(n, what));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }

 private:
  std::string b_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const InfoNetModel& model, const std::filesystem::path& path) {
  std::string b = "INFN";
  put_u32(b, kCheckpointVersion);
  const std::string cfg = model.config().to_json().dump();
  put_u32(b, static_cast<std::uint32_t>(cfg.size()));
  b += cfg;
  const auto& params = model.params();
  put_u32(b, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.names()[i];
    put_u16(b, static_cast<std::uint16_t>(name.size()));
    b += name;
    const auto& t = params[i];
    put_u8(b, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32(b, static_cast<std::uint32_t>(d));
    for (float f : t.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(b, bits);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

InfoNetModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes));
  if (std::string(r.take(4, "magic"), 4) != "INFN") throw FormatError("bad checkpoint magic at offset 0");
  const std::size_t vpos = r.offset();
  const auto version = r.uint(4, "format_version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint format_version " + std::to_string(version) + " at offset " +
                      std::to_string(vpos) + " (reader supports " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto cfg_len = r.uint(4, "config length");
  const std::size_t cfg_pos = r.offset();
  const std::string cfg_text(r.take(cfg_len, "config"), cfg_len);
  InfoNetConfig cfg;
  try {
    cfg = InfoNetConfig::from_json(nlohmann::json::parse(cfg_text));
  } catch (const std::exception& e) {
    throw FormatError("invalid config block at offset " + std::to_string(cfg_pos) + ": " + e.what());
  }
  const auto count = r.uint(4, "tensor count");
  ad::ParamStore<float> store;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto nlen = r.uint(2, "name length");
    std::string name(r.take(nlen, "name"), nlen);
    const auto ndim = r.uint(1, "ndim");
    if (ndim > 4) throw FormatError("tensor " + name + " has ndim " + std::to_string(ndim) + " at offset " +
                                    std::to_string(r.offset() - 1));
    Shape shape;
    for (std::uint64_t d = 0; d < ndim; ++d) shape.push_back(static_cast<std::size_t>(r.uint(4, "dim")));
    Tensor<float> t(shape);
    for (std::size_t e = 0; e < t.size(); ++e) {
      const auto bits = static_cast<std::uint32_t>(r.uint(4, "tensor data"));
      std::memcpy(&t[e], &bits, 4);
    }
    if (store.contains(name)) throw FormatError("duplicate tensor " + name + " at offset " + std::to_string(r.offset()));
    store.add(name, std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes at offset " + std::to_string(r.offset()));
  try {
    return InfoNetModel(cfg, std::move(store));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint tensors do not match config: ") + e.what());
  }
}

// ---------------------------------------------------------------- instantiations

#define INFONET_INSTANTIATE_NET(Real)                                                                               \
  template Tensor<Real> pair_features<Real>(const copula::RankedSequence&, std::size_t);                            \
  template Var<Real> encode_pairs<Real>(const ad::BoundParams<Real>&, const copula::RankedSequence&,                \
                                        const InfoNetConfig&, ad::Tape<Real>&);                                     \
  template QueryCache<Real> build_query_cache<Real>(const ad::ParamStore<Real>&, const InfoNetConfig&);             \
  template Var<Real> forward_graph<Real>(ad::Tape<Real>&, const ad::BoundParams<Real>&, const InfoNetConfig&,       \
                                         const copula::RankedSequence&, const QueryCache<Real>*);

INFONET_INSTANTIATE_NET(float)
INFONET_INSTANTIATE_NET(double)

}  // namespace infonet::net
