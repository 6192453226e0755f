#pragma once

// Amortised MI estimator: a latent-query attention encoder that reads a
// ranked sequence of pairs and emits an L x L discriminant table.
//
//   pairs -> Fourier features -> tokens (T x d_model)
//   latents (n_latents x d_model) cross-attend to tokens, then n_self
//   self-attention blocks; repeated n_cross times
//   L*L cell queries cross-attend to the latents -> one scalar per cell
//   fixed Gaussian blur -> table

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "infonet/copula.hpp"
#include "infonet/dvcore.hpp"
#include "infonet/params.hpp"
#include "infonet/simdist.hpp"

namespace infonet::net {

struct InfoNetConfig {
  std::size_t L = 32;
  std::size_t d_model = 64;
  std::size_t n_latents = 64;
  std::size_t n_cross = 2;
  std::size_t n_self = 2;
  std::size_t n_heads = 4;
  std::size_t fourier_bands = 8;
  std::size_t mlp_ratio = 2;
  std::size_t smooth_ksize = 3;
  double smooth_sigma = 0.375;

  // Blur defaults scaled from a 15-tap, sigma-3 kernel at L = 256.
  static std::size_t default_ksize(std::size_t L);
  static double default_sigma(std::size_t L);
  // Desk defaults with smoothing derived from L.
  static InfoNetConfig with_table_size(std::size_t L);

  std::size_t feature_dim() const { return 2 + 4 * fourier_bands; }
  void validate() const;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults (smoothing follows L); unknown keys throw.
  static InfoNetConfig from_json(const nlohmann::json& j);
};

class InfoNetModel {
 public:
  InfoNetModel(InfoNetConfig config, ad::ParamStore<float> params);

  // Fresh parameters; the output head starts at zero so the initial table is
  // constant and every estimate is exactly 0.
  static InfoNetModel initialize(const InfoNetConfig& config, Rng& rng);

  const InfoNetConfig& config() const { return config_; }
  const ad::ParamStore<float>& params() const { return params_; }
  ad::ParamStore<float>& params() { return params_; }

 private:
  InfoNetConfig config_;
  ad::ParamStore<float> params_;
};

// Parameter layout (names and shapes) for a config.
std::vector<std::pair<std::string, ad::Shape>> parameter_layout(const InfoNetConfig& config);

// [2u-1, 2v-1, then per band k: sin/cos(pi 2^k u), sin/cos(pi 2^k v)] per pair -> T x feature_dim.
template <class Real>
ad::Tensor<Real> pair_features(const copula::RankedSequence& seq, std::size_t bands);

template <class Real>
ad::Var<Real> encode_pairs(const ad::BoundParams<Real>& p, const copula::RankedSequence& seq,
                           const InfoNetConfig& cfg, ad::Tape<Real>& tape);

// Parameter-only subexpressions, reusable across forwards of one model.
// With a cache the decoder also runs in folded form: the output projection
// and the linear head compose to one vector per head, so
//   cell value = cell_offset + sum_h softmax(q_h k_h^T) (v_h w_h)
// which equals the unfolded graph up to float rounding.
template <class Real>
struct QueryCache {
  ad::Tensor<Real> latent_queries;  // heads x n_latents x dh, scaled
  ad::Tensor<Real> cell_queries;    // heads x L*L x dh, scaled
  ad::Tensor<Real> value_head;      // heads x dh x 1
  ad::Tensor<Real> cell_offset;     // L*L
};

template <class Real>
QueryCache<Real> build_query_cache(const ad::ParamStore<Real>& params, const InfoNetConfig& cfg);

// Table variable [L x L] (blurred). Inference passes a cache; training
// leaves it null.
template <class Real>
ad::Var<Real> forward_graph(ad::Tape<Real>& tape, const ad::BoundParams<Real>& p, const InfoNetConfig& cfg,
                            const copula::RankedSequence& seq, const QueryCache<Real>* cache = nullptr);

dv::DiscriminantTable forward(const InfoNetModel& model, const copula::RankedSequence& seq);

// Normalised ksize x ksize Gaussian; ksize must be odd.
ad::Tensor<double> gaussian_kernel(std::size_t ksize, double sigma);
dv::DiscriminantTable gaussian_blur_table(const dv::DiscriminantTable& table, std::size_t ksize, double sigma);

struct TrainConfig {
  std::size_t batch_n = 32;
  std::size_t T = 2000;
  std::size_t steps = 20000;
  double lr = 3e-4;
  std::uint64_t seed = 0;
  int max_components = 20;
  std::size_t warmup_steps = 0;
  double clip_grad_norm = 0.0;  // 0 disables
  std::size_t threads = 1;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainLogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  InfoNetModel model;
  std::vector<TrainLogRow> log;
};

using TrainCallback = std::function<void(const TrainLogRow&, const InfoNetModel&)>;

// Cosine-decayed learning rate with optional linear warmup.
double scheduled_lr(const TrainConfig& cfg, std::size_t step);

// Gradient ascent on the batched DV objective over freshly simulated GMMs.
// Throws TrainingError (naming step and seed) on a non-finite loss.
TrainResult train(const InfoNetConfig& config, const TrainConfig& train_cfg, const TrainCallback& on_step = {});

// Inference handle: holds the model by reference plus its query cache.
// Thread-safe for concurrent calls; the model must outlive it.
class Predictor {
 public:
  explicit Predictor(const InfoNetModel& model);

  const InfoNetModel& model() const { return *model_; }
  dv::DiscriminantTable table(const copula::RankedSequence& seq) const;
  double estimate(const sim::JointSequence& seq, std::uint64_t seed, std::size_t shuffles = 1) const;

 private:
  const InfoNetModel* model_;
  QueryCache<float> cache_;
};

// Copula -> forward -> DV value, averaged over `shuffles` marginal draws
// seeded from `seed`.
double estimate_mi(const InfoNetModel& model, const sim::JointSequence& seq, std::uint64_t seed,
                   std::size_t shuffles = 1);

// Same per-item results as estimate_mi; parameter-only work is shared.
std::vector<double> estimate_mi_batch(const InfoNetModel& model, std::span<const sim::JointSequence> seqs,
                                      std::span<const std::uint64_t> seeds, std::size_t shuffles = 1);

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const InfoNetModel& model, const std::filesystem::path& path);
InfoNetModel load_checkpoint(const std::filesystem::path& path);

}  // namespace infonet::net
