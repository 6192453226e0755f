#pragma once

// Evaluation protocols and machine-readable reports.

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "infonet/baselines.hpp"
#include "infonet/infonet.hpp"
#include "infonet/simdist.hpp"
#include "infonet/smi.hpp"

namespace infonet::eval {

inline constexpr int kSchemaVersion = 1;

// ------------------------------------------------------------ estimators

// A named scalar estimator. With `copula` set, inputs are rank-transformed
// before `fn` sees them.
struct Estimator {
  std::string id;
  bool copula = false;
  smi::ScalarMiFn fn;

  double operator()(const sim::JointSequence& seq, std::uint64_t seed) const;
};

// Default copula flags: on for InfoNet and MINE, off for KSG and KDE.
Estimator make_ksg(int k = 5, bool copula = false);
Estimator make_kde(bool copula = false);
Estimator make_mine(const baselines::MineConfig& cfg, bool copula = true);
// Ranks internally regardless of the flag.
Estimator make_infonet(std::shared_ptr<const net::InfoNetModel> model, std::size_t shuffles = 1);
// Returns a fixed value; used to check the harness.
Estimator make_constant(const std::string& id, double value);

// ------------------------------------------------------------ records

struct EvalRecord {
  std::string estimator;
  std::string distribution;
  double gt_mi_nats = 0.0;
  double estimate_nats = 0.0;
  double wall_time_seconds = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const EvalRecord&) const = default;
};

void write_records_csv(const std::filesystem::path& path, const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_records_csv(const std::filesystem::path& path);

// "<suite>_<est1+est2...>_seed<S>"
std::string report_stem(const std::string& suite, const std::vector<std::string>& estimator_ids, std::uint64_t seed);

struct Report {
  std::string suite;
  std::vector<std::string> estimators;
  std::uint64_t seed = 0;
  nlohmann::json summary;
  std::vector<EvalRecord> records;
  std::string table_csv;  // optional summary table, written as <stem>.table.csv

  nlohmann::json to_json() const;  // summary document (schema_version, suite, estimators, seed, summary)
};

// Writes <stem>.csv (records) and <stem>.json (summary); returns the stem path.
std::filesystem::path write_report(const std::filesystem::path& dir, const Report& report);
// Reads both files of a stem back.
Report read_report(const std::filesystem::path& stem_path);

// ------------------------------------------------------------ statistics

// Mann-Whitney AUC: P(score_pos > score_neg) + P(equal) / 2.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct MeanVar {
  double mean = 0.0;
  double variance = 0.0;  // population variance
  std::size_t n = 0;
};
MeanVar mean_var(std::span<const double> v);

// ------------------------------------------------------------ suites

// Bivariate standard Gaussian with correlation rho.
sim::GmmSpec gaussian_spec(double rho);

struct SanityOptions {
  std::vector<double> rhos;
  std::size_t T = 2000;
  std::size_t seeds = 10;
  std::uint64_t root_seed = 0;
};

// Per estimator, rho: mean estimate vs analytic gt; per estimator: MAE and
// total runtime. Every estimator sees the same sequences.
Report sanity_gaussian_suite(const std::vector<Estimator>& estimators, const SanityOptions& opt);

// Per level and estimator: mean and population variance of (estimate - gt).
Report binned_error_suite(const sim::Dataset& dataset, const std::vector<Estimator>& estimators,
                          std::uint64_t root_seed = 0);

struct Triplet {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> y_alt;
  sim::GroundTruth gt;
  sim::GroundTruth gt_alt;
  int components = 0;

  // 1 iff I(x, y) > I(x, y_alt).
  int label() const { return gt.mi_nats > gt_alt.mi_nats ? 1 : 0; }
  // |gt - gt_alt| > 2 (stderr + stderr_alt).
  bool unambiguous() const;
};

struct TripletOptions {
  std::size_t T = 2000;
  std::size_t mci_samples = 200000;
  std::size_t max_attempts = 1000;
};

// Shared x-marginal construction: both joints share the mixture weights,
// the x means and the first row of every covariance factor; the y rows and
// y means are drawn independently. x (and the component labels) are drawn
// once; y and y_alt come from each joint's component conditionals. Triplets
// whose labels are statistically ambiguous are redrawn.
Triplet make_triplet(int components, const TripletOptions& opt, Rng& rng);

struct OrderOptions {
  std::vector<int> Ks{1, 5, 10};
  std::size_t per_K = 200;
  TripletOptions triplet;
  std::uint64_t root_seed = 0;
};

std::vector<std::vector<Triplet>> make_triplet_sets(const OrderOptions& opt);

// Accuracy = fraction of triplets with sign(est(x,y) - est(x,y_alt)) equal to
// the label's sign; ties count as wrong.
Report order_accuracy_suite(const std::vector<std::vector<Triplet>>& sets, const std::vector<Estimator>& estimators,
                            std::uint64_t root_seed = 0);

struct PairContext {
  sim::HighDimKind kind;
  std::size_t d = 0;
  bool dependent = false;
};

using PairScorer = std::function<double(const sim::HighDimPair&, const PairContext&, std::uint64_t seed)>;

// Sliced-MI score with m projections (plain scalar estimator when d = 1).
PairScorer sliced_scorer(const Estimator& estimator, std::size_t m, std::size_t threads = 1);
// Ground-truth MI of the generating family.
PairScorer oracle_scorer();

struct IndependenceOptions {
  sim::HighDimKind kind = sim::HighDimKind::indep_coords;
  std::vector<std::size_t> ds{16};
  std::vector<std::size_t> ns{128};
  std::size_t trials = 10;
  std::size_t pairs_per_trial = 100;
  std::uint64_t root_seed = 0;
};

// Per (d, n): AUC of scores vs dependence labels in each trial (half the
// pairs dependent), and the mean over trials.
Report independence_auc_suite(const PairScorer& scorer, const std::string& scorer_id, const IndependenceOptions& opt);

struct TimingOptions {
  std::vector<std::size_t> lengths{200, 500, 1000, 2000, 5000};
  std::size_t repeats = 100;
  std::size_t batch = 16;  // InfoNet batch mode; 0 disables
  std::uint64_t root_seed = 0;
};

// Mean wall time per estimate, timing the estimate call only. When `model`
// is given, two extra rows: "infonet-1" times standalone estimate_mi calls and
// "infonet-<batch>" times estimate_mi_batch per item.
Report timing_suite(const std::vector<Estimator>& estimators, const TimingOptions& opt,
                    std::shared_ptr<const net::InfoNetModel> model = nullptr);

}  // namespace infonet::eval
