#include "infonet/simdist.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace infonet::sim {

namespace {

constexpr double kCovJitter = 0.01;

double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

std::size_t pick_component(const std::vector<double>& weights, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

// Mean/stderr of the log density ratio; no minimum sample count.
GroundTruth mci_estimate(const GmmSpec& spec, std::size_t n, Rng& rng) {
  const GmmDensity joint(spec);
  const auto [mx, my] = gmm_marginals(spec);
  const GmmDensity dx(mx), dy(my);
  const Eigen::MatrixXd pts = sample_points(spec, n, rng);
  // Welford accumulation for a stable variance.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z[2] = {pts(static_cast<Eigen::Index>(i), 0), pts(static_cast<Eigen::Index>(i), 1)};
    const double r = joint.log_pdf(z) - dx.log_pdf({z, 1}) - dy.log_pdf({z + 1, 1});
    const double delta = r - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (r - mean);
  }
  const double var = n > 1 ? m2 / static_cast<double>(n - 1) : 0.0;
  return GroundTruth{mean, GtMethod::mci, std::sqrt(var / static_cast<double>(n))};
}

}  // namespace

void GmmSpec::validate() const {
  const std::size_t k = weights.size();
  if (k == 0) throw std::invalid_argument("GmmSpec: no components");
  if (means.size() != k || covs.size() != k) throw std::invalid_argument("GmmSpec: component arrays differ in length");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("GmmSpec: negative or NaN weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("GmmSpec: weights sum to " + std::to_string(sum));
  const auto d = means.front().size();
  for (std::size_t i = 0; i < k; ++i) {
    if (means[i].size() != d || covs[i].rows() != d || covs[i].cols() != d) {
      throw std::invalid_argument("GmmSpec: component " + std::to_string(i) + " has inconsistent dimension");
    }
    if (!covs[i].isApprox(covs[i].transpose(), 1e-12)) {
      throw std::invalid_argument("GmmSpec: covariance " + std::to_string(i) + " is not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(covs[i]);
    if (llt.info() != Eigen::Success) {
      throw std::invalid_argument("GmmSpec: covariance " + std::to_string(i) + " is not positive definite");
    }
  }
}

void JointSequence::validate() const {
  if (xs.size() != ys.size()) {
    throw std::invalid_argument("JointSequence: " + std::to_string(xs.size()) + " xs vs " +
                                std::to_string(ys.size()) + " ys");
  }
  if (xs.size() < 2) throw std::invalid_argument("JointSequence: need at least 2 samples");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) {
      throw std::invalid_argument("JointSequence: non-finite sample at index " + std::to_string(i));
    }
  }
}

std::string to_string(GtMethod m) { return m == GtMethod::analytic ? "analytic" : "mci"; }

GtMethod gt_method_from_string(const std::string& s) {
  if (s == "analytic") return GtMethod::analytic;
  if (s == "mci") return GtMethod::mci;
  throw std::invalid_argument("unknown ground-truth method: " + s);
}

GmmDensity::GmmDensity(const GmmSpec& spec) {
  k_ = spec.components();
  dim_ = spec.dim();
  if (k_ == 0 || dim_ == 0) throw std::invalid_argument("GmmDensity: empty spec");
  log_weights_.resize(k_);
  log_norm_.resize(k_);
  means_.resize(k_ * dim_);
  chol_.assign(k_ * dim_ * dim_, 0.0);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (std::size_t c = 0; c < k_; ++c) {
    Eigen::LLT<Eigen::MatrixXd> llt(spec.covs[c]);
    if (llt.info() != Eigen::Success) {
      throw std::invalid_argument("GmmDensity: covariance " + std::to_string(c) + " is not positive definite");
    }
    const Eigen::MatrixXd L = llt.matrixL();
    double log_det_half = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      log_det_half += std::log(L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
      means_[c * dim_ + i] = spec.means[c](static_cast<Eigen::Index>(i));
      for (std::size_t j = 0; j <= i; ++j) {
        chol_[(c * dim_ + i) * dim_ + j] = L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    }
    log_weights_[c] = std::log(spec.weights[c]);
    log_norm_[c] = -0.5 * static_cast<double>(dim_) * log2pi - log_det_half;
  }
}

double GmmDensity::log_pdf(std::span<const double> point) const {
  if (point.size() != dim_) {
    throw std::invalid_argument("gmm log-density: point has dimension " + std::to_string(point.size()) +
                                ", mixture has " + std::to_string(dim_));
  }
  double terms_buf[64];
  std::vector<double> terms_heap;
  double* terms = terms_buf;
  if (k_ > 64) {
    terms_heap.resize(k_);
    terms = terms_heap.data();
  }
  double y_buf[16];
  std::vector<double> y_heap;
  double* y = y_buf;
  if (dim_ > 16) {
    y_heap.resize(dim_);
    y = y_heap.data();
  }
  for (std::size_t c = 0; c < k_; ++c) {
    const double* mu = means_.data() + c * dim_;
    const double* L = chol_.data() + c * dim_ * dim_;
    double q = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      double acc = point[i] - mu[i];
      for (std::size_t j = 0; j < i; ++j) acc -= L[i * dim_ + j] * y[j];
      y[i] = acc / L[i * dim_ + i];
      q += y[i] * y[i];
    }
    terms[c] = log_weights_[c] + log_norm_[c] - 0.5 * q;
  }
  return log_sum_exp({terms, k_});
}

GmmSpec sample_gmm_spec(int max_components, int dim, Rng& rng) {
  if (max_components < 1) throw std::invalid_argument("sample_gmm_spec: max_components must be >= 1");
  if (dim < 2) throw std::invalid_argument("sample_gmm_spec: dim must be >= 2");
  const auto k = static_cast<std::size_t>(rng.integer(1, max_components));
  GmmSpec spec;
  spec.weights.resize(k);
  // Dirichlet(1): normalised unit exponentials.
  double total = 0.0;
  for (auto& w : spec.weights) {
    w = -std::log1p(-rng.uniform());
    total += w;
  }
  for (auto& w : spec.weights) w /= total;
  // Renormalise once more so the sum is within rounding of 1.
  total = 0.0;
  for (double w : spec.weights) total += w;
  for (auto& w : spec.weights) w /= total;

  for (std::size_t c = 0; c < k; ++c) {
    Eigen::VectorXd mu(dim);
    for (int i = 0; i < dim; ++i) mu(i) = rng.uniform(-5.0, 5.0);
    Eigen::MatrixXd D(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) D(i, j) = rng.uniform(-3.0, 3.0);
    Eigen::MatrixXd cov = D * D.transpose() + kCovJitter * Eigen::MatrixXd::Identity(dim, dim);
    cov = 0.5 * (cov + cov.transpose());
    spec.means.push_back(std::move(mu));
    spec.covs.push_back(std::move(cov));
  }
  return spec;
}

Eigen::MatrixXd sample_points(const GmmSpec& spec, std::size_t n, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(spec.dim());
  std::vector<Eigen::MatrixXd> factors;
  factors.reserve(spec.components());
  for (const auto& cov : spec.covs) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw std::logic_error("sample_points: Cholesky factorisation failed");
    factors.emplace_back(llt.matrixL());
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), d);
  Eigen::VectorXd z(d);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t c = pick_component(spec.weights, rng);
    for (Eigen::Index i = 0; i < d; ++i) z(i) = rng.normal();
    out.row(static_cast<Eigen::Index>(t)) = (spec.means[c] + factors[c] * z).transpose();
  }
  return out;
}

JointSequence sample_joint(const GmmSpec& spec, std::size_t T, Rng& rng) {
  if (T < 2) throw std::invalid_argument("sample_joint: T must be >= 2");
  if (spec.dim() != 2) throw std::invalid_argument("sample_joint: spec must be 2-dimensional");
  const Eigen::MatrixXd pts = sample_points(spec, T, rng);
  JointSequence seq;
  seq.xs.resize(T);
  seq.ys.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    seq.xs[t] = pts(static_cast<Eigen::Index>(t), 0);
    seq.ys[t] = pts(static_cast<Eigen::Index>(t), 1);
  }
  return seq;
}

GroundTruth gaussian_mi_analytic(double rho) {
  if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("gaussian_mi_analytic: |rho| must be < 1 (MI is infinite)");
  return GroundTruth{-0.5 * std::log1p(-rho * rho), GtMethod::analytic, 0.0};
}

double gmm_logpdf(const GmmSpec& spec, std::span<const double> point) { return GmmDensity(spec).log_pdf(point); }

std::pair<GmmSpec, GmmSpec> gmm_marginals(const GmmSpec& spec) {
  if (spec.dim() != 2) throw std::invalid_argument("gmm_marginals: spec must be 2-dimensional");
  GmmSpec mx, my;
  mx.weights = spec.weights;
  my.weights = spec.weights;
  for (std::size_t c = 0; c < spec.components(); ++c) {
    mx.means.push_back(Eigen::VectorXd::Constant(1, spec.means[c](0)));
    my.means.push_back(Eigen::VectorXd::Constant(1, spec.means[c](1)));
    mx.covs.push_back(Eigen::MatrixXd::Constant(1, 1, spec.covs[c](0, 0)));
    my.covs.push_back(Eigen::MatrixXd::Constant(1, 1, spec.covs[c](1, 1)));
  }
  return {std::move(mx), std::move(my)};
}

GroundTruth mci_mi(const GmmSpec& spec, std::size_t n_samples, Rng& rng) {
  if (n_samples < 1000) throw std::invalid_argument("mci_mi: n_samples must be >= 1000");
  if (spec.dim() != 2) throw std::invalid_argument("mci_mi: spec must be 2-dimensional");
  return mci_estimate(spec, n_samples, rng);
}

GroundTruth ground_truth_mi(const GmmSpec& spec, std::size_t n_samples, Rng& rng) {
  if (spec.components() == 1) {
    const auto& c = spec.covs.front();
    return gaussian_mi_analytic(c(0, 1) / std::sqrt(c(0, 0) * c(1, 1)));
  }
  return mci_mi(spec, n_samples, rng);
}

Dataset gen_leveled_eval_set(std::span<const double> levels, double tol, std::size_t per_level, std::size_t T,
                             Rng& rng, const LeveledOptions& opts) {
  if (levels.empty()) throw std::invalid_argument("gen_leveled_eval_set: no levels");
  if (!std::is_sorted(levels.begin(), levels.end())) throw std::invalid_argument("gen_leveled_eval_set: levels must be sorted");
  if (!(tol > 0)) throw std::invalid_argument("gen_leveled_eval_set: tol must be positive");
  if (per_level < 1) throw std::invalid_argument("gen_leveled_eval_set: per_level must be >= 1");
  if (T < 2) throw std::invalid_argument("gen_leveled_eval_set: T must be >= 2");

  Dataset ds;
  ds.T = T;
  ds.tol = tol;
  ds.levels.assign(levels.begin(), levels.end());
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const double level = levels[li];
    Rng level_rng = rng.split(li);
    std::size_t accepted = 0, rejections = 0;
    while (accepted < per_level) {
      const std::uint64_t seed = level_rng.next_seed();
      const Rng root(seed);
      Rng spec_rng = root.split(0);
      GmmSpec spec = sample_gmm_spec(opts.max_components, 2, spec_rng);
      GroundTruth gt;
      bool keep = true;
      if (spec.components() == 1) {
        Rng unused = root.split(1);
        gt = ground_truth_mi(spec, opts.mci_samples, unused);
      } else {
        Rng screen_rng = root.split(2);
        const GroundTruth screen = mci_estimate(spec, opts.screen_samples, screen_rng);
        if (std::abs(screen.mi_nats - level) > tol + 5.0 * screen.std_error + 0.01) {
          keep = false;
        } else {
          Rng mci_rng = root.split(1);
          gt = mci_estimate(spec, opts.mci_samples, mci_rng);
          if (gt.std_error >= opts.max_stderr) keep = false;
        }
      }
      if (keep && std::abs(gt.mi_nats - level) > tol) keep = false;
      if (!keep) {
        if (++rejections > opts.max_rejections) {
          std::ostringstream os;
          os << "level " << level << ": rejection cap of " << opts.max_rejections << " exceeded with " << accepted
             << '/' << per_level << " records";
          throw GenerationError(os.str());
        }
        continue;
      }
      DatasetRecord rec;
      std::ostringstream id;
      id << "L" << li << "_" << accepted;
      rec.id = id.str();
      rec.family = "gmm";
      rec.components = static_cast<int>(spec.components());
      rec.level = level;
      rec.gt = gt;
      rec.seed = seed;
      Rng seq_rng = root.split(3);
      rec.seq = sample_joint(spec, T, seq_rng);
      ds.records.push_back(std::move(rec));
      ++accepted;
    }
  }
  return ds;
}

double halfcube(double x) { return std::copysign(std::pow(std::abs(x), 1.5), x); }

JointSequence transform_family(const JointSequence& seq, Family family) {
  JointSequence out = seq;
  auto f = [family](double v) { return family == Family::halfcube ? halfcube(v) : std::asinh(v); };
  std::transform(out.xs.begin(), out.xs.end(), out.xs.begin(), f);
  std::transform(out.ys.begin(), out.ys.end(), out.ys.begin(), f);
  return out;
}

GroundTruth additive_noise_mi(double eps) {
  if (!(eps > 0)) throw std::invalid_argument("additive noise: eps must be positive");
  // density of X + N: overlap length of [y - eps, y + eps] with [0, 1], over 2 eps
  auto density = [eps](double y) {
    const double len = std::min(1.0, y + eps) - std::max(0.0, y - eps);
    return len > 0 ? len / (2.0 * eps) : 0.0;
  };
  auto integrand = [&](double y) {
    const double p = density(y);
    return p > 0 ? -p * std::log(p) : 0.0;
  };
  constexpr int kIntervals = 100'000;
  const double lo = -eps, hi = 1.0 + eps;
  const double h = (hi - lo) / kIntervals;
  double s = 0.5 * (integrand(lo) + integrand(hi));
  for (int i = 1; i < kIntervals; ++i) s += integrand(lo + h * i);
  const double entropy_y = s * h;
  return GroundTruth{entropy_y - std::log(2.0 * eps), GtMethod::analytic, 0.0};
}

std::pair<JointSequence, GroundTruth> sample_additive_noise(double eps, std::size_t T, Rng& rng) {
  const GroundTruth gt = additive_noise_mi(eps);
  if (T < 2) throw std::invalid_argument("sample_additive_noise: T must be >= 2");
  JointSequence seq;
  seq.xs.resize(T);
  seq.ys.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    seq.xs[t] = rng.uniform();
    seq.ys[t] = seq.xs[t] + rng.uniform(-eps, eps);
  }
  return {std::move(seq), gt};
}

std::string to_string(HighDimKind k) {
  switch (k) {
    case HighDimKind::one_feature: return "one_feature";
    case HighDimKind::two_features: return "two_features";
    case HighDimKind::indep_coords: return "indep_coords";
  }
  return "?";
}

HighDimKind highdim_kind_from_string(const std::string& s) {
  if (s == "one_feature" || s == "a") return HighDimKind::one_feature;
  if (s == "two_features" || s == "b") return HighDimKind::two_features;
  if (s == "indep_coords" || s == "c") return HighDimKind::indep_coords;
  throw std::invalid_argument("unknown dependency kind: " + s);
}

HighDimPair gen_highdim_pair(HighDimKind kind, std::size_t d, std::size_t n, bool dependent, Rng& rng) {
  if (n < 2) throw std::invalid_argument("gen_highdim_pair: n must be >= 2");
  if (d < 1) throw std::invalid_argument("gen_highdim_pair: d must be >= 1");
  if (kind == HighDimKind::two_features && (d < 2 || d % 2 != 0)) {
    throw std::invalid_argument("gen_highdim_pair: two_features needs an even d >= 2");
  }
  const auto N = static_cast<Eigen::Index>(n), D = static_cast<Eigen::Index>(d);
  auto normal_matrix = [&]() {
    Eigen::MatrixXd m(N, D);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < D; ++j) m(i, j) = rng.normal();
    return m;
  };
  HighDimPair out;
  out.X = normal_matrix();
  Eigen::MatrixXd Z = normal_matrix();
  if (!dependent) {
    out.Y = std::move(Z);
    return out;
  }
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  switch (kind) {
    case HighDimKind::one_feature: {
      const Eigen::VectorXd s = out.X.rowwise().sum() / std::sqrt(static_cast<double>(d));
      out.Y = inv_sqrt2 * (Z.colwise() + s);
      break;
    }
    case HighDimKind::two_features: {
      const Eigen::Index half = D / 2;
      const double inv_d = 1.0 / static_cast<double>(d);
      const Eigen::VectorXd s1 = out.X.leftCols(half).rowwise().sum() * inv_d;
      const Eigen::VectorXd s2 = out.X.rightCols(D - half).rowwise().sum() * inv_d;
      out.Y.resize(N, D);
      out.Y.leftCols(half) = inv_sqrt2 * (Z.leftCols(half).colwise() + s1);
      out.Y.rightCols(D - half) = inv_sqrt2 * (Z.rightCols(D - half).colwise() + s2);
      break;
    }
    case HighDimKind::indep_coords:
      out.Y = inv_sqrt2 * (out.X + Z);
      break;
  }
  return out;
}

double highdim_true_mi(HighDimKind kind, std::size_t d, bool dependent) {
  if (!dependent) return 0.0;
  const double dd = static_cast<double>(d);
  switch (kind) {
    case HighDimKind::one_feature:
      return 0.5 * std::log1p(dd);
    case HighDimKind::two_features: {
      // each half contributes one eigenvalue h^2 / d^2 of A A^T
      const double h = std::floor(dd / 2.0);
      return std::log1p(h * h / (dd * dd));
    }
    case HighDimKind::indep_coords:
      return 0.5 * dd * std::numbers::ln2;
  }
  return 0.0;
}

// ---------------------------------------------------------------- on disk

namespace {

static_assert(std::endian::native == std::endian::little, "dataset files assume a little-endian host");

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_sequence_bin(const std::filesystem::path& path, const JointSequence& seq) {
  seq.validate();
  std::vector<double> buf(2 * seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    buf[2 * t] = seq.xs[t];
    buf[2 * t + 1] = seq.ys[t];
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
  if (!out) throw DatasetError("write failed: " + path.string());
}

JointSequence read_sequence_bin(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  if (bytes.size() % (2 * sizeof(double)) != 0) {
    throw DatasetError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 16 bytes");
  }
  const std::size_t T = bytes.size() / (2 * sizeof(double));
  JointSequence seq;
  seq.xs.resize(T);
  seq.ys.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::memcpy(&seq.xs[t], bytes.data() + 16 * t, 8);
    std::memcpy(&seq.ys[t], bytes.data() + 16 * t + 8, 8);
  }
  try {
    seq.validate();
  } catch (const std::invalid_argument& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
  return seq;
}

JointSequence read_sequence_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  JointSequence seq;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double x = 0, y = 0;
    std::string extra;
    if (!(ls >> x >> y) || (ls >> extra)) {
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": expected two numeric columns");
    }
    seq.xs.push_back(x);
    seq.ys.push_back(y);
  }
  try {
    seq.validate();
  } catch (const std::invalid_argument& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
  return seq;
}

JointSequence read_sequence_file(const std::filesystem::path& path) {
  return path.extension() == ".bin" ? read_sequence_bin(path) : read_sequence_text(path);
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DatasetError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::ordered_json m;
  m["format_version"] = kDatasetFormatVersion;
  m["T"] = ds.T;
  m["tol"] = ds.tol;
  m["levels"] = ds.levels;
  auto recs = nlohmann::ordered_json::array();
  for (const auto& r : ds.records) {
    if (r.seq.size() != ds.T) throw DatasetError("record " + r.id + " has length " + std::to_string(r.seq.size()));
    const std::string file = r.id + ".bin";
    write_sequence_bin(dir / file, r.seq);
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["file"] = file;
    j["family"] = r.family;
    j["K"] = r.components;
    j["level"] = r.level;
    j["gt_mi_nats"] = r.gt.mi_nats;
    j["gt_method"] = to_string(r.gt.method);
    j["gt_stderr"] = r.gt.std_error;
    j["seed"] = r.seed;
    recs.push_back(std::move(j));
  }
  m["records"] = std::move(recs);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + (dir / "manifest.json").string());
  out << m.dump(2) << '\n';
  if (!out) throw DatasetError("write failed: " + (dir / "manifest.json").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_all(mpath));
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(mpath.string() + ": " + e.what());
  }
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kDatasetFormatVersion) {
      throw DatasetError(mpath.string() + ": unsupported format_version " + std::to_string(version));
    }
    Dataset ds;
    ds.T = m.at("T").get<std::size_t>();
    ds.tol = m.value("tol", 0.0);
    if (m.contains("levels")) ds.levels = m.at("levels").get<std::vector<double>>();
    for (const auto& j : m.at("records")) {
      DatasetRecord r;
      r.id = j.at("id").get<std::string>();
      r.family = j.at("family").get<std::string>();
      r.components = j.at("K").get<int>();
      r.level = j.value("level", 0.0);
      r.gt.mi_nats = j.at("gt_mi_nats").get<double>();
      r.gt.method = gt_method_from_string(j.at("gt_method").get<std::string>());
      r.gt.std_error = j.at("gt_stderr").get<double>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.seq = read_sequence_bin(dir / j.at("file").get<std::string>());
      if (r.seq.size() != ds.T) {
        throw DatasetError(r.id + ": sequence length " + std::to_string(r.seq.size()) + " != T " +
                           std::to_string(ds.T));
      }
      ds.records.push_back(std::move(r));
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(mpath.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DatasetError(mpath.string() + ": " + e.what());
  }
}

}  // namespace infonet::sim
