#include "infonet/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "infonet/copula.hpp"

namespace infonet::eval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class F>
std::pair<double, double> timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  const double v = f();
  return {v, seconds_since(t0)};
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<std::string> ids_of(const std::vector<Estimator>& ests) {
  std::vector<std::string> out;
  for (const auto& e : ests) out.push_back(e.id);
  return out;
}

}  // namespace

// ------------------------------------------------------------ estimators

double Estimator::operator()(const sim::JointSequence& seq, std::uint64_t seed) const {
  if (!copula) return fn(seq, seed);
  const auto ranked = copula::empirical_copula(seq);
  return fn(sim::JointSequence{ranked.us, ranked.vs}, seed);
}

Estimator make_ksg(int k, bool copula) {
  return Estimator{"ksg-" + std::to_string(k), copula,
                   [k](const sim::JointSequence& s, std::uint64_t seed) { return baselines::ksg_mi(s, k, seed); }};
}

Estimator make_kde(bool copula) {
  return Estimator{"kde", copula, [](const sim::JointSequence& s, std::uint64_t) { return baselines::kde_mi(s); }};
}

Estimator make_mine(const baselines::MineConfig& cfg, bool copula) {
  return Estimator{"mine-" + std::to_string(cfg.iters), copula, [cfg](const sim::JointSequence& s, std::uint64_t seed) {
                     Rng rng(seed);
                     return baselines::mine_mi(s, cfg, rng);
                   }};
}

Estimator make_infonet(std::shared_ptr<const net::InfoNetModel> model, std::size_t shuffles) {
  if (!model) throw std::invalid_argument("make_infonet: null model");
  auto predictor = std::make_shared<const net::Predictor>(*model);
  return Estimator{"infonet", false,
                   [model, predictor, shuffles](const sim::JointSequence& s, std::uint64_t seed) {
                     return predictor->estimate(s, seed, shuffles);
                   }};
}

Estimator make_constant(const std::string& id, double value) {
  return Estimator{id, false, [value](const sim::JointSequence&, std::uint64_t) { return value; }};
}

// ------------------------------------------------------------ records

void write_records_csv(const fs::path& path, const std::vector<EvalRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "estimator,distribution,gt_mi_nats,estimate_nats,wall_time_seconds,seed\n";
  for (const auto& r : records) {
    for (const auto* field : {&r.estimator, &r.distribution}) {
      if (field->find_first_of(",\"\n") != std::string::npos) {
        throw std::invalid_argument("record field contains a separator: " + *field);
      }
    }
    out << r.estimator << ',' << r.distribution << ',' << fmt_double(r.gt_mi_nats) << ','
        << fmt_double(r.estimate_nats) << ',' << fmt_double(r.wall_time_seconds) << ',' << r.seed << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<EvalRecord> read_records_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "estimator,distribution,gt_mi_nats,estimate_nats,wall_time_seconds,seed") {
    throw std::runtime_error(path.string() + ": unexpected header");
  }
  std::vector<EvalRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    try {
      out.push_back(EvalRecord{f[0], f[1], std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stoull(f[5])});
    } catch (const std::logic_error&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

std::string report_stem(const std::string& suite, const std::vector<std::string>& ids, std::uint64_t seed) {
  std::string joined;
  for (std::size_t i = 0; i < ids.size(); ++i) joined += (i ? "+" : "") + ids[i];
  return suite + "_" + joined + "_seed" + std::to_string(seed);
}

json Report::to_json() const {
  return json{{"schema_version", kSchemaVersion},
              {"suite", suite},
              {"estimators", estimators},
              {"seed", seed},
              {"record_count", records.size()},
              {"summary", summary}};
}

fs::path write_report(const fs::path& dir, const Report& report) {
  fs::create_directories(dir);
  const fs::path stem = dir / report_stem(report.suite, report.estimators, report.seed);
  write_records_csv(fs::path(stem.string() + ".csv"), report.records);
  std::ofstream js(stem.string() + ".json", std::ios::trunc);
  if (!js) throw std::runtime_error("cannot write " + stem.string() + ".json");
  js << report.to_json().dump(2) << "\n";
  if (!report.table_csv.empty()) {
    std::ofstream tb(stem.string() + ".table.csv", std::ios::trunc);
    tb << report.table_csv;
  }
  return stem;
}

Report read_report(const fs::path& stem) {
  std::ifstream js(stem.string() + ".json");
  if (!js) throw std::runtime_error("cannot read " + stem.string() + ".json");
  const json j = json::parse(js);
  if (j.at("schema_version").get<int>() != kSchemaVersion) {
    throw std::runtime_error("unsupported report schema_version " + j.at("schema_version").dump());
  }
  Report r;
  r.suite = j.at("suite").get<std::string>();
  r.estimators = j.at("estimators").get<std::vector<std::string>>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.summary = j.at("summary");
  r.records = read_records_csv(fs::path(stem.string() + ".csv"));
  if (r.records.size() != j.at("record_count").get<std::size_t>()) {
    throw std::runtime_error(stem.string() + ": record count does not match summary");
  }
  const fs::path table(stem.string() + ".table.csv");
  if (fs::exists(table)) {
    std::ifstream tb(table);
    r.table_csv.assign(std::istreambuf_iterator<char>(tb), std::istreambuf_iterator<char>());
  }
  return r;
}

// ------------------------------------------------------------ statistics

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("roc_auc: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw std::invalid_argument("roc_auc: non-finite score");
    n_pos += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_auc: both classes must be present");
  // Midranks: tied scores share the mean of their positions.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += mid;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

MeanVar mean_var(std::span<const double> v) {
  MeanVar out;
  out.n = v.size();
  if (v.empty()) return out;
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.variance = ss / static_cast<double>(v.size());
  return out;
}

// ------------------------------------------------------------ sanity

sim::GmmSpec gaussian_spec(double rho) {
  if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("gaussian_spec: |rho| must be < 1");
  sim::GmmSpec s;
  s.weights = {1.0};
  s.means = {Eigen::Vector2d::Zero()};
  Eigen::Matrix2d c;
  c << 1.0, rho, rho, 1.0;
  s.covs = {c};
  return s;
}

Report sanity_gaussian_suite(const std::vector<Estimator>& estimators, const SanityOptions& opt) {
  Report rep;
  rep.suite = "sanity";
  rep.estimators = ids_of(estimators);
  rep.seed = opt.root_seed;
  const Rng root(opt.root_seed);
  std::map<std::string, double> total_time, abs_err;
  std::map<std::string, std::size_t> count;
  json rows = json::array();
  for (std::size_t ri = 0; ri < opt.rhos.size(); ++ri) {
    const double rho = opt.rhos[ri];
    const double gt = sim::gaussian_mi_analytic(rho).mi_nats;
    const auto spec = gaussian_spec(rho);
    std::vector<sim::JointSequence> seqs;
    std::vector<std::uint64_t> seeds;
    for (std::size_t s = 0; s < opt.seeds; ++s) {
      Rng r = root.split(ri).split(s);
      seqs.push_back(sim::sample_joint(spec, opt.T, r));
      seeds.push_back(r.next_seed());
    }
    for (const auto& est : estimators) {
      std::vector<double> vals;
      for (std::size_t s = 0; s < opt.seeds; ++s) {
        const auto [v, secs] = timed([&] { return est(seqs[s], seeds[s]); });
        vals.push_back(v);
        total_time[est.id] += secs;
        abs_err[est.id] += std::abs(v - gt);
        ++count[est.id];
        rep.records.push_back(EvalRecord{est.id, "rho" + fmt_double(rho) + "_s" + std::to_string(s), gt, v, secs,
                                         seeds[s]});
      }
      const auto mv = mean_var(vals);
      rows.push_back(json{{"estimator", est.id},
                          {"rho", rho},
                          {"gt_mi_nats", gt},
                          {"mean_estimate", mv.mean},
                          {"std_error", std::sqrt(mv.variance / std::max<double>(1.0, double(mv.n) - 1.0))},
                          {"n", mv.n}});
    }
  }
  json per_est = json::object();
  for (const auto& e : estimators) {
    per_est[e.id] = json{{"mae", abs_err[e.id] / static_cast<double>(std::max<std::size_t>(1, count[e.id]))},
                         {"total_runtime_seconds", total_time[e.id]}};
  }
  rep.summary = json{{"T", opt.T}, {"seeds", opt.seeds}, {"rows", rows}, {"estimators", per_est}};
  return rep;
}

// ------------------------------------------------------------ binned error

Report binned_error_suite(const sim::Dataset& ds, const std::vector<Estimator>& estimators, std::uint64_t root_seed) {
  if (ds.levels.empty()) throw std::invalid_argument("binned_error_suite: dataset has no levels");
  Report rep;
  rep.suite = "bins";
  rep.estimators = ids_of(estimators);
  rep.seed = root_seed;
  const Rng root(root_seed);
  // errors[estimator][level index]
  std::vector<std::vector<std::vector<double>>> errs(estimators.size(),
                                                     std::vector<std::vector<double>>(ds.levels.size()));
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& rec = ds.records[i];
    const auto it = std::find(ds.levels.begin(), ds.levels.end(), rec.level);
    if (it == ds.levels.end()) throw std::invalid_argument("binned_error_suite: record " + rec.id + " has no level");
    const auto li = static_cast<std::size_t>(it - ds.levels.begin());
    const std::uint64_t seed = root.derive_seed(i);
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      const auto [v, secs] = timed([&] { return estimators[e](rec.seq, seed); });
      errs[e][li].push_back(v - rec.gt.mi_nats);
      rep.records.push_back(EvalRecord{estimators[e].id, rec.id, rec.gt.mi_nats, v, secs, seed});
    }
  }
  json rows = json::array();
  std::ostringstream table;
  table << "estimator";
  for (double l : ds.levels) table << ",mean@" << l << ",var@" << l;
  table << "\n";
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    table << estimators[e].id;
    for (std::size_t li = 0; li < ds.levels.size(); ++li) {
      if (errs[e][li].empty()) {
        throw std::invalid_argument("binned_error_suite: level " + fmt_double(ds.levels[li]) + " is empty");
      }
      const auto mv = mean_var(errs[e][li]);
      rows.push_back(json{{"estimator", estimators[e].id},
                          {"level", ds.levels[li]},
                          {"mean_error", mv.mean},
                          {"variance", mv.variance},
                          {"n", mv.n}});
      table << ',' << fmt_double(mv.mean) << ',' << fmt_double(mv.variance);
    }
    table << "\n";
  }
  rep.summary = json{{"levels", ds.levels}, {"tol", ds.tol}, {"T", ds.T}, {"rows", rows}};
  rep.table_csv = table.str();
  return rep;
}

// ------------------------------------------------------------ order

bool Triplet::unambiguous() const {
  return std::abs(gt.mi_nats - gt_alt.mi_nats) > 2.0 * (gt.std_error + gt_alt.std_error);
}

Triplet make_triplet(int K, const TripletOptions& opt, Rng& rng) {
  if (K < 1) throw std::invalid_argument("make_triplet: components must be >= 1");
  if (opt.T < 2) throw std::invalid_argument("make_triplet: T must be >= 2");
  const auto k = static_cast<std::size_t>(K);
  for (std::size_t attempt = 0; attempt < opt.max_attempts; ++attempt) {
    std::vector<double> w(k);
    double tot = 0.0;
    for (double& v : w) {
      v = -std::log1p(-rng.uniform());
      tot += v;
    }
    for (double& v : w) v /= tot;
    std::vector<double> mux(k);
    std::vector<Eigen::Vector2d> row_x(k);
    for (std::size_t c = 0; c < k; ++c) {
      mux[c] = rng.uniform(-5.0, 5.0);
      row_x[c] = Eigen::Vector2d(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
    }
    sim::GmmSpec specs[2];
    for (auto& spec : specs) {
      spec.weights = w;
      for (std::size_t c = 0; c < k; ++c) {
        const double muy = rng.uniform(-5.0, 5.0);
        const Eigen::Vector2d row_y(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
        Eigen::Matrix2d cov;
        cov << row_x[c].squaredNorm() + 0.01, row_x[c].dot(row_y), row_x[c].dot(row_y), row_y.squaredNorm() + 0.01;
        spec.means.push_back(Eigen::Vector2d(mux[c], muy));
        spec.covs.push_back(cov);
      }
    }
    Triplet t;
    t.components = K;
    t.gt = sim::ground_truth_mi(specs[0], opt.mci_samples, rng);
    t.gt_alt = sim::ground_truth_mi(specs[1], opt.mci_samples, rng);
    if (!t.unambiguous()) continue;
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    t.x.resize(opt.T);
    t.y.resize(opt.T);
    t.y_alt.resize(opt.T);
    for (std::size_t i = 0; i < opt.T; ++i) {
      const std::size_t c = pick(rng.engine());
      const double sxx = specs[0].covs[c](0, 0);
      const double x = mux[c] + std::sqrt(sxx) * rng.normal();
      t.x[i] = x;
      for (int j = 0; j < 2; ++j) {
        const auto& cov = specs[j].covs[c];
        const double slope = cov(0, 1) / sxx;
        const double cvar = std::max(0.0, cov(1, 1) - cov(0, 1) * slope);
        const double y = specs[j].means[c](1) + slope * (x - mux[c]) + std::sqrt(cvar) * rng.normal();
        (j == 0 ? t.y : t.y_alt)[i] = y;
      }
    }
    return t;
  }
  throw sim::GenerationError("make_triplet: no unambiguous triplet in " + std::to_string(opt.max_attempts) +
                             " attempts (K=" + std::to_string(K) + ")");
}

std::vector<std::vector<Triplet>> make_triplet_sets(const OrderOptions& opt) {
  const Rng root(opt.root_seed);
  std::vector<std::vector<Triplet>> sets;
  for (std::size_t ki = 0; ki < opt.Ks.size(); ++ki) {
    std::vector<Triplet> set;
    for (std::size_t i = 0; i < opt.per_K; ++i) {
      Rng r = root.split(ki).split(i);
      set.push_back(make_triplet(opt.Ks[ki], opt.triplet, r));
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

Report order_accuracy_suite(const std::vector<std::vector<Triplet>>& sets, const std::vector<Estimator>& estimators,
                            std::uint64_t root_seed) {
  Report rep;
  rep.suite = "order";
  rep.estimators = ids_of(estimators);
  rep.seed = root_seed;
  const Rng root(root_seed);
  json rows = json::array();
  std::ostringstream table;
  table << "estimator";
  for (const auto& set : sets) table << ",K=" << (set.empty() ? 0 : set.front().components);
  table << "\n";
  for (const auto& est : estimators) {
    table << est.id;
    for (std::size_t si = 0; si < sets.size(); ++si) {
      const auto& set = sets[si];
      if (set.empty()) throw std::invalid_argument("order_accuracy_suite: empty triplet set");
      const int K = set.front().components;
      std::size_t correct = 0;
      for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& t = set[i];
        if (!t.unambiguous()) throw std::invalid_argument("order_accuracy_suite: ambiguous triplet label");
        Rng r = root.split(si).split(i);
        const std::uint64_t s1 = r.next_seed(), s2 = r.next_seed();
        const auto [a, ta] = timed([&] { return est(sim::JointSequence{t.x, t.y}, s1); });
        const auto [b, tb] = timed([&] { return est(sim::JointSequence{t.x, t.y_alt}, s2); });
        const bool ok = (t.label() == 1 && a > b) || (t.label() == 0 && a < b);
        correct += ok ? 1 : 0;
        const std::string id = "K" + std::to_string(K) + "_t" + std::to_string(i);
        rep.records.push_back(EvalRecord{est.id, id + "_y", t.gt.mi_nats, a, ta, s1});
        rep.records.push_back(EvalRecord{est.id, id + "_yalt", t.gt_alt.mi_nats, b, tb, s2});
      }
      const double acc = static_cast<double>(correct) / static_cast<double>(set.size());
      rows.push_back(json{{"estimator", est.id}, {"K", K}, {"accuracy", acc}, {"triplets", set.size()}});
      table << ',' << fmt_double(acc);
    }
    table << "\n";
  }
  rep.summary = json{{"rows", rows}};
  rep.table_csv = table.str();
  return rep;
}

// ------------------------------------------------------------ independence

PairScorer sliced_scorer(const Estimator& estimator, std::size_t m, std::size_t threads) {
  return [estimator, m, threads](const sim::HighDimPair& pair, const PairContext& ctx, std::uint64_t seed) {
    if (ctx.d == 1) {
      sim::JointSequence seq{std::vector<double>(pair.X.data(), pair.X.data() + pair.X.rows()),
                             std::vector<double>(pair.Y.data(), pair.Y.data() + pair.Y.rows())};
      return estimator(seq, seed);
    }
    Rng rng(seed);
    smi::ScalarMiFn fn = [&estimator](const sim::JointSequence& s, std::uint64_t sd) { return estimator(s, sd); };
    return smi::sliced_mi(fn, pair.X, pair.Y, m, rng, threads);
  };
}

PairScorer oracle_scorer() {
  return [](const sim::HighDimPair&, const PairContext& ctx, std::uint64_t) {
    return sim::highdim_true_mi(ctx.kind, ctx.d, ctx.dependent);
  };
}

Report independence_auc_suite(const PairScorer& scorer, const std::string& scorer_id, const IndependenceOptions& opt) {
  if (opt.pairs_per_trial < 2) throw std::invalid_argument("independence_auc_suite: need >= 2 pairs per trial");
  Report rep;
  rep.suite = "indep";
  rep.estimators = {scorer_id};
  rep.seed = opt.root_seed;
  const Rng root(opt.root_seed);
  json rows = json::array();
  std::ostringstream table;
  table << "d,n,mean_auc\n";
  for (std::size_t di = 0; di < opt.ds.size(); ++di) {
    for (std::size_t ni = 0; ni < opt.ns.size(); ++ni) {
      const std::size_t d = opt.ds[di], n = opt.ns[ni];
      std::vector<double> aucs;
      for (std::size_t tr = 0; tr < opt.trials; ++tr) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (std::size_t p = 0; p < opt.pairs_per_trial; ++p) {
          const bool dep = (p % 2) == 1;
          Rng r = root.split(di).split(ni).split(tr).split(p);
          const auto pair = sim::gen_highdim_pair(opt.kind, d, n, dep, r);
          const std::uint64_t seed = r.next_seed();
          const PairContext ctx{opt.kind, d, dep};
          const auto [score, secs] = timed([&] { return scorer(pair, ctx, seed); });
          scores.push_back(score);
          labels.push_back(dep ? 1 : 0);
          rep.records.push_back(EvalRecord{scorer_id,
                                           "d" + std::to_string(d) + "_n" + std::to_string(n) + "_t" +
                                               std::to_string(tr) + "_p" + std::to_string(p),
                                           sim::highdim_true_mi(opt.kind, d, dep), score, secs, seed});
        }
        aucs.push_back(roc_auc(scores, labels));
      }
      const auto mv = mean_var(aucs);
      rows.push_back(json{{"d", d}, {"n", n}, {"mean_auc", mv.mean}, {"trial_aucs", aucs}});
      table << d << ',' << n << ',' << fmt_double(mv.mean) << "\n";
    }
  }
  rep.summary = json{{"kind", sim::to_string(opt.kind)},
                     {"trials", opt.trials},
                     {"pairs_per_trial", opt.pairs_per_trial},
                     {"rows", rows}};
  rep.table_csv = table.str();
  return rep;
}

// ------------------------------------------------------------ timing

Report timing_suite(const std::vector<Estimator>& estimators, const TimingOptions& opt,
                    std::shared_ptr<const net::InfoNetModel> model) {
  if (opt.repeats < 1) throw std::invalid_argument("timing_suite: repeats must be >= 1");
  Report rep;
  rep.suite = "timing";
  rep.estimators = ids_of(estimators);
  const std::string single_id = "infonet-1";
  const std::string batch_id = "infonet-" + std::to_string(opt.batch);
  const bool batch_mode = model && opt.batch > 0;
  if (model) rep.estimators.push_back(single_id);
  if (batch_mode) rep.estimators.push_back(batch_id);
  rep.seed = opt.root_seed;
  const Rng root(opt.root_seed);
  const double rho = 0.5;
  const auto spec = gaussian_spec(rho);
  const double gt = sim::gaussian_mi_analytic(rho).mi_nats;
  std::map<std::string, std::map<std::size_t, double>> mean_time;
  for (const std::size_t T : opt.lengths) {
    std::vector<sim::JointSequence> seqs;
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < opt.repeats; ++r) {
      Rng rr = root.split(T).split(r);
      seqs.push_back(sim::sample_joint(spec, T, rr));
      seeds.push_back(rr.next_seed());
    }
    const auto dist_id = [T](std::size_t r) { return "T" + std::to_string(T) + "_r" + std::to_string(r); };
    for (const auto& est : estimators) {
      double total = 0.0;
      for (std::size_t r = 0; r < opt.repeats; ++r) {
        const auto [v, secs] = timed([&] { return est(seqs[r], seeds[r]); });
        total += secs;
        rep.records.push_back(EvalRecord{est.id, dist_id(r), gt, v, secs, seeds[r]});
      }
      mean_time[est.id][T] = total / static_cast<double>(opt.repeats);
    }
    if (model) {
      // Standalone call: everything derived from the weights is rebuilt.
      double total = 0.0;
      for (std::size_t r = 0; r < opt.repeats; ++r) {
        const auto [v, secs] = timed([&] { return net::estimate_mi(*model, seqs[r], seeds[r]); });
        total += secs;
        rep.records.push_back(EvalRecord{single_id, dist_id(r), gt, v, secs, seeds[r]});
      }
      mean_time[single_id][T] = total / static_cast<double>(opt.repeats);
    }
    if (batch_mode) {
      const std::size_t groups = std::max<std::size_t>(1, opt.repeats / opt.batch);
      double total = 0.0;
      for (std::size_t g = 0; g < groups; ++g) {
        std::vector<sim::JointSequence> group;
        std::vector<std::uint64_t> gseeds;
        for (std::size_t b = 0; b < opt.batch; ++b) {
          const std::size_t idx = (g * opt.batch + b) % opt.repeats;
          group.push_back(seqs[idx]);
          gseeds.push_back(seeds[idx]);
        }
        const auto t0 = std::chrono::steady_clock::now();
        const auto vals = net::estimate_mi_batch(*model, group, gseeds);
        const double per_item = seconds_since(t0) / static_cast<double>(opt.batch);
        total += per_item;
        for (std::size_t b = 0; b < opt.batch; ++b) {
          rep.records.push_back(EvalRecord{batch_id,
                                           "T" + std::to_string(T) + "_g" + std::to_string(g) + "_b" +
                                               std::to_string(b),
                                           gt, vals[b], per_item, gseeds[b]});
        }
      }
      mean_time[batch_id][T] = total / static_cast<double>(groups);
    }
  }
  json rows = json::array();
  std::ostringstream table;
  table << "estimator";
  for (std::size_t T : opt.lengths) table << ",T=" << T;
  table << "\n";
  for (const auto& id : rep.estimators) {
    table << id;
    for (std::size_t T : opt.lengths) {
      rows.push_back(json{{"estimator", id}, {"T", T}, {"mean_seconds", mean_time[id][T]}});
      table << ',' << fmt_double(mean_time[id][T]);
    }
    table << "\n";
  }
  rep.summary = json{{"repeats", opt.repeats}, {"batch", opt.batch}, {"rows", rows}};
  rep.table_csv = table.str();
  return rep;
}

}  // namespace infonet::eval
