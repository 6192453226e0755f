#pragma once

// Simulated joint distributions: random Gaussian mixtures, sampling, and
// ground-truth mutual information (closed form or Monte-Carlo integration).

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "infonet/rng.hpp"

namespace infonet::sim {

struct GmmSpec {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;

  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return means.empty() ? 0 : static_cast<std::size_t>(means.front().size()); }

  // Throws std::invalid_argument when weights do not form a distribution
  // (tolerance 1e-12) or a covariance is not symmetric positive definite.
  void validate() const;
};

// T paired scalar samples.
struct JointSequence {
  std::vector<double> xs;
  std::vector<double> ys;

  std::size_t size() const { return xs.size(); }
  // Equal lengths, T >= 2, all finite.
  void validate() const;
};

enum class GtMethod { analytic, mci };

struct GroundTruth {
  double mi_nats = 0.0;
  GtMethod method = GtMethod::analytic;
  double std_error = 0.0;
};

std::string to_string(GtMethod m);
GtMethod gt_method_from_string(const std::string& s);

// Precomputed Cholesky factors for repeated density evaluation.
class GmmDensity {
 public:
  explicit GmmDensity(const GmmSpec& spec);

  std::size_t dim() const { return dim_; }
  double log_pdf(std::span<const double> point) const;

 private:
  std::size_t dim_ = 0;
  std::size_t k_ = 0;
  std::vector<double> log_weights_;
  std::vector<double> log_norm_;
  std::vector<double> means_;  // k x d
  std::vector<double> chol_;   // k x d x d, lower triangular
};

// K uniform on {1..max_components}, Dirichlet(1) weights, mean coordinates
// uniform on [-5, 5], covariance D D^T + 0.01 I with D entries uniform on [-3, 3].
GmmSpec sample_gmm_spec(int max_components, int dim, Rng& rng);

// n x d matrix of i.i.d. draws.
Eigen::MatrixXd sample_points(const GmmSpec& spec, std::size_t n, Rng& rng);

// T draws from a 2-d spec; x is the first coordinate, y the second.
JointSequence sample_joint(const GmmSpec& spec, std::size_t T, Rng& rng);

// -0.5 ln(1 - rho^2) for a bivariate Gaussian.
GroundTruth gaussian_mi_analytic(double rho);

double gmm_logpdf(const GmmSpec& spec, std::span<const double> point);

// One-dimensional marginals of a 2-d mixture.
std::pair<GmmSpec, GmmSpec> gmm_marginals(const GmmSpec& spec);

// Monte-Carlo integration of E[log p(x,y) - log p(x) - log p(y)].
GroundTruth mci_mi(const GmmSpec& spec, std::size_t n_samples, Rng& rng);

// Closed form for single-component specs, MCI otherwise.
GroundTruth ground_truth_mi(const GmmSpec& spec, std::size_t n_samples, Rng& rng);

struct DatasetRecord {
  std::string id;
  std::string family;
  int components = 0;
  double level = 0.0;
  GroundTruth gt;
  std::uint64_t seed = 0;
  JointSequence seq;
};

struct Dataset {
  std::size_t T = 0;
  double tol = 0.0;
  std::vector<double> levels;
  std::vector<DatasetRecord> records;
};

struct LeveledOptions {
  std::size_t max_rejections = 1'000'000;  // per level
  std::size_t mci_samples = 200'000;
  double max_stderr = 0.005;
  int max_components = 20;
  // Cheap MCI pass used to discard candidates far from the level.
  std::size_t screen_samples = 4000;
};

// Rejection-samples GMM specs until every level holds per_level specs whose
// ground truth lies within tol of it. Each level draws from its own stream
// rng.split(level index). Throws GenerationError when a level exceeds
// max_rejections.
Dataset gen_leveled_eval_set(std::span<const double> levels, double tol, std::size_t per_level, std::size_t T,
                             Rng& rng, const LeveledOptions& opts = {});

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- on disk

inline constexpr int kDatasetFormatVersion = 1;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raw little-endian doubles, interleaved x0,y0,x1,y1,...
void write_sequence_bin(const std::filesystem::path& path, const JointSequence& seq);
JointSequence read_sequence_bin(const std::filesystem::path& path);
// Two whitespace-separated columns per line; blank lines and '#' lines skipped.
JointSequence read_sequence_text(const std::filesystem::path& path);
// Binary when the extension is ".bin", text otherwise.
JointSequence read_sequence_file(const std::filesystem::path& path);

// Writes <dir>/manifest.json and one <id>.bin per record. Creates dir.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
// Reads a directory written by write_dataset; sequences are loaded too.
Dataset read_dataset(const std::filesystem::path& dir);

enum class Family { halfcube, asinh };

// Strictly increasing elementwise maps; MI is unchanged.
double halfcube(double x);
JointSequence transform_family(const JointSequence& seq, Family family);

// MI of (X, X + N), X ~ U(0,1), N ~ U(-eps, eps): h(Y) - ln(2 eps), with
// h(Y) by trapezoidal quadrature of the closed-form density on 1e5 points.
GroundTruth additive_noise_mi(double eps);
std::pair<JointSequence, GroundTruth> sample_additive_noise(double eps, std::size_t T, Rng& rng);

enum class HighDimKind { one_feature, two_features, indep_coords };

std::string to_string(HighDimKind k);
HighDimKind highdim_kind_from_string(const std::string& s);

struct HighDimPair {
  Eigen::MatrixXd X;  // n x d
  Eigen::MatrixXd Y;  // n x d
};

HighDimPair gen_highdim_pair(HighDimKind kind, std::size_t d, std::size_t n, bool dependent, Rng& rng);

// Exact I(X; Y) of the construction above (0 when not dependent).
double highdim_true_mi(HighDimKind kind, std::size_t d, bool dependent);

}  // namespace infonet::sim
