// infonet: data generation, training, estimation and benchmarks.
//
// Exit codes: 0 success, 2 usage error, 1 runtime failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "infonet/baselines.hpp"
#include "infonet/evalbench.hpp"
#include "infonet/infonet.hpp"
#include "infonet/simdist.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace infonet;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
}

void write_run_json(const fs::path& dir, const std::string& command, const json& resolved) {
  json j{{"command", command}, {"toolkit_version", INFONET_VERSION}, {"config", resolved}};
  std::ofstream out(dir / "run.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "run.json").string());
  out << j.dump(2) << "\n";
}

fs::path parent_or_cwd(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string log;
  std::size_t checkpoint_every = 0;
  bool resume = false;
};

int run_train(const TrainArgs& a) {
  if (a.resume) throw UsageError("--resume is not supported: training always starts from a fresh initialisation");
  net::InfoNetConfig mcfg;
  net::TrainConfig tcfg;
  if (!a.config.empty()) {
    const json j = read_json_file(a.config);
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    for (const auto& [k, _] : j.items()) {
      if (k != "model" && k != "train") throw UsageError("config: unknown key '" + k + "'");
    }
    try {
      if (j.contains("model")) mcfg = net::InfoNetConfig::from_json(j["model"]);
      if (j.contains("train")) tcfg = net::TrainConfig::from_json(j["train"]);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  if (a.steps) tcfg.steps = *a.steps;
  if (a.seed) tcfg.seed = *a.seed;
  if (a.threads) tcfg.threads = *a.threads;
  if (tcfg.steps < 1) throw UsageError("--steps must be >= 1");

  const fs::path out(a.out);
  const fs::path dir = parent_or_cwd(out);
  fs::create_directories(dir);
  const fs::path log_path = a.log.empty() ? fs::path(out).replace_extension(".log.csv") : fs::path(a.log);
  write_run_json(dir, "train",
                 json{{"model", mcfg.to_json()}, {"train", tcfg.to_json()}, {"out", out.string()},
                      {"log", log_path.string()}, {"checkpoint_every", a.checkpoint_every}});

  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  log << "step,loss,wall_seconds\n";
  auto on_step = [&](const net::TrainLogRow& r, const net::InfoNetModel& m) {
    log << r.step << ',' << r.loss << ',' << r.wall_seconds << '\n';
    log.flush();
    if (a.checkpoint_every > 0 && r.step % a.checkpoint_every == 0 && r.step < tcfg.steps) {
      net::save_checkpoint(m, out);
    }
  };
  const auto result = net::train(mcfg, tcfg, on_step);
  net::save_checkpoint(result.model, out);
  const auto& last = result.log.back();
  std::printf("trained %zu steps in %.1f s, final loss %.4f -> %s\n", last.step, last.wall_seconds, last.loss,
              out.string().c_str());
  return 0;
}

// --------------------------------------------------------------- gen-data

std::vector<double> default_levels() {
  std::vector<double> v;
  for (int i = 0; i <= 9; ++i) v.push_back(i / 10.0);
  return v;
}

struct GenArgs {
  std::string out;
  std::vector<double> levels = default_levels();
  double tol = 0.02;
  std::size_t per_level = 50;
  std::size_t T = 2000;
  std::uint64_t seed = 0;
  std::size_t mci_samples = 200000;
  bool paper_scale = false;
};

int run_gen_data(GenArgs a) {
  if (a.paper_scale) a.per_level = std::max<std::size_t>(a.per_level, 1000);
  if (a.per_level < 1) throw UsageError("--per-level must be >= 1");
  if (a.T < 2) throw UsageError("--T must be >= 2");
  if (!(a.tol > 0)) throw UsageError("--tol must be positive");
  std::sort(a.levels.begin(), a.levels.end());
  const fs::path dir(a.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  write_run_json(dir, "gen-data",
                 json{{"out", a.out}, {"levels", a.levels}, {"tol", a.tol}, {"per_level", a.per_level}, {"T", a.T},
                      {"seed", a.seed}, {"mci_samples", a.mci_samples}, {"paper_scale", a.paper_scale}});
  sim::LeveledOptions opts;
  opts.mci_samples = a.mci_samples;
  Rng rng(a.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = sim::gen_leveled_eval_set(a.levels, a.tol, a.per_level, a.T, rng, opts);
  sim::write_dataset(dir, ds);
  std::printf("wrote %zu records (%zu levels x %zu) to %s in %.1f s\n", ds.records.size(), a.levels.size(),
              a.per_level, dir.string().c_str(),
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

// --------------------------------------------------------------- estimate

struct EstimateArgs {
  std::string method;
  std::string model;
  std::string input;
  int k = 5;
  int iters = 500;
  std::size_t mine_batch = 100;
  std::string copula;
  std::size_t batch = 0;
  std::size_t shuffles = 1;
  std::uint64_t seed = 0;
  bool bits = false;
  std::string out;
};

struct NamedSequence {
  std::string id;
  sim::JointSequence seq;
};

std::vector<NamedSequence> load_inputs(const fs::path& input) {
  std::vector<NamedSequence> out;
  if (fs::is_directory(input)) {
    for (auto& r : sim::read_dataset(input).records) out.push_back({r.id, std::move(r.seq)});
  } else {
    out.push_back({input.filename().string(), sim::read_sequence_file(input)});
  }
  return out;
}

std::shared_ptr<const net::InfoNetModel> load_model(const std::string& path) {
  return std::make_shared<const net::InfoNetModel>(net::load_checkpoint(path));
}

int run_estimate(const EstimateArgs& a) {
  if (a.method == "infonet" && a.model.empty()) throw UsageError("--method infonet requires --model");
  if (a.method == "infonet" && a.copula == "off") {
    throw UsageError("--copula off is not available for infonet: the model is defined on rank-transformed data");
  }
  if (a.k < 1) throw UsageError("--k must be >= 1");
  if (a.iters < 1) throw UsageError("--iters must be >= 1");
  if (a.shuffles < 1) throw UsageError("--shuffles must be >= 1");
  if (a.batch > 0 && a.method != "infonet") throw UsageError("--batch applies to --method infonet only");

  const fs::path run_dir = a.out.empty() ? fs::path(".") : fs::path(a.out);
  fs::create_directories(run_dir);
  write_run_json(run_dir, "estimate",
                 json{{"method", a.method}, {"model", a.model}, {"input", a.input}, {"k", a.k}, {"iters", a.iters},
                      {"mine_batch", a.mine_batch}, {"copula", a.copula.empty() ? "default" : a.copula},
                      {"batch", a.batch}, {"shuffles", a.shuffles}, {"seed", a.seed}, {"bits", a.bits}});

  std::vector<NamedSequence> inputs;
  try {
    inputs = load_inputs(a.input);
  } catch (const sim::DatasetError& e) {
    throw std::runtime_error(std::string("malformed input: ") + e.what());
  }
  const double scale = a.bits ? 1.0 / std::numbers::ln2 : 1.0;
  const char* unit = a.bits ? "bits" : "nats";
  auto print = [&](const std::string& id, double v, double secs) {
    std::printf("%s\t%.6f %s\t%.6f s\n", id.c_str(), v * scale, unit, secs);
  };

  std::vector<eval::EvalRecord> records;
  if (a.method == "infonet") {
    const auto model = load_model(a.model);
    const std::size_t B = a.batch == 0 ? 1 : a.batch;
    for (std::size_t i = 0; i < inputs.size(); i += B) {
      const std::size_t n = std::min(B, inputs.size() - i);
      std::vector<sim::JointSequence> seqs;
      std::vector<std::uint64_t> seeds;
      for (std::size_t j = 0; j < n; ++j) {
        seqs.push_back(inputs[i + j].seq);
        seeds.push_back(a.seed);
      }
      const auto t0 = std::chrono::steady_clock::now();
      const auto vals = net::estimate_mi_batch(*model, seqs, seeds, a.shuffles);
      const double per_item = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / n;
      for (std::size_t j = 0; j < n; ++j) {
        print(inputs[i + j].id, vals[j], per_item);
        records.push_back({"infonet", inputs[i + j].id, 0.0, vals[j], per_item, a.seed});
      }
    }
  } else {
    eval::Estimator est;
    if (a.method == "ksg") est = eval::make_ksg(a.k, a.copula == "on");
    else if (a.method == "kde") est = eval::make_kde(a.copula == "on");
    else if (a.method == "mine") {
      baselines::MineConfig cfg;
      cfg.iters = a.iters;
      cfg.batch = a.mine_batch;
      est = eval::make_mine(cfg, a.copula != "off");
    } else {
      throw UsageError("unknown method '" + a.method + "'");
    }
    for (const auto& in : inputs) {
      const auto t0 = std::chrono::steady_clock::now();
      const double v = est(in.seq, a.seed);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      print(in.id, v, secs);
      records.push_back({est.id, in.id, 0.0, v, secs, a.seed});
    }
  }
  if (!a.out.empty()) eval::write_records_csv(run_dir / "estimates.csv", records);
  return 0;
}

// -------------------------------------------------------------- benchmark

struct BenchArgs {
  std::string suite;
  std::string estimators;
  std::string out;
  std::string model;
  std::string dataset;
  bool paper_scale = false;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  int k = 5;
  std::size_t seeds = 0;
  std::size_t per_k = 0;
  std::size_t projections = 1000;
  std::size_t trials = 10;
  std::string kind = "indep_coords";
  std::vector<std::size_t> dims{16};
  std::vector<std::size_t> lengths;
  std::size_t repeats = 100;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// "ksg", "ksg-K", "kde", "mine", "mine-N", "infonet".
eval::Estimator estimator_from_name(const std::string& name, const BenchArgs& a,
                                    const std::shared_ptr<const net::InfoNetModel>& model, std::size_t mine_batch) {
  auto suffix = [&](const std::string& prefix, int fallback) {
    if (name == prefix) return fallback;
    try {
      std::size_t used = 0;
      const int v = std::stoi(name.substr(prefix.size() + 1), &used);
      if (used + prefix.size() + 1 != name.size() || v < 1) throw std::invalid_argument(name);
      return v;
    } catch (const std::exception&) {
      throw UsageError("bad estimator name '" + name + "'");
    }
  };
  if (name == "infonet") return eval::make_infonet(model);
  if (name == "kde") return eval::make_kde();
  if (name.rfind("ksg", 0) == 0) return eval::make_ksg(suffix("ksg", a.k));
  if (name.rfind("mine", 0) == 0) {
    baselines::MineConfig cfg;
    cfg.iters = suffix("mine", 500);
    cfg.batch = mine_batch;
    return eval::make_mine(cfg);
  }
  throw UsageError("unknown estimator '" + name + "'");
}

int run_benchmark(const BenchArgs& a) {
  static const std::map<std::string, std::string> default_estimators{{"sanity", "infonet,ksg,kde,mine"},
                                                                     {"bins", "infonet,ksg,kde,mine"},
                                                                     {"order", "infonet,mine-10,mine-500,ksg"},
                                                                     {"indep", "infonet"},
                                                                     {"timing", "infonet,ksg,kde,mine"}};
  const auto it = default_estimators.find(a.suite);
  if (it == default_estimators.end()) throw UsageError("unknown suite '" + a.suite + "'");
  const auto names = split_list(a.estimators.empty() ? it->second : a.estimators);
  if (names.empty()) throw UsageError("--estimators is empty");

  std::vector<std::string> missing;
  const bool wants_infonet = std::find(names.begin(), names.end(), "infonet") != names.end();
  if (wants_infonet && a.model.empty()) missing.push_back("--model (needed by estimator infonet)");
  if (a.suite == "bins" && a.dataset.empty()) missing.push_back("--dataset (needed by suite bins)");
  if (a.suite == "indep" && names.size() != 1) missing.push_back("exactly one estimator for suite indep");
  if (!missing.empty()) {
    std::string msg = "missing prerequisites:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw UsageError(msg);
  }

  std::shared_ptr<const net::InfoNetModel> model;
  if (wants_infonet || (a.suite == "timing" && !a.model.empty())) model = load_model(a.model);
  // The Gaussian sweep runs MINE with batch 500.
  const std::size_t mine_batch = a.suite == "sanity" ? 500 : 100;
  std::vector<eval::Estimator> ests;
  for (const auto& n : names) ests.push_back(estimator_from_name(n, a, model, mine_batch));

  const fs::path dir(a.out);
  fs::create_directories(dir);
  json resolved{{"suite", a.suite},   {"estimators", names},     {"out", a.out},       {"model", a.model},
                {"dataset", a.dataset}, {"paper_scale", a.paper_scale}, {"seed", a.seed}, {"threads", a.threads}};

  eval::Report rep;
  if (a.suite == "sanity") {
    eval::SanityOptions o;
    for (int i = -9; i <= 9; ++i) o.rhos.push_back(i / 10.0);
    o.seeds = a.seeds ? a.seeds : (a.paper_scale ? 50 : 10);
    o.root_seed = a.seed;
    resolved["rhos"] = o.rhos;
    resolved["T"] = o.T;
    resolved["seeds"] = o.seeds;
    write_run_json(dir, "benchmark", resolved);
    rep = eval::sanity_gaussian_suite(ests, o);
  } else if (a.suite == "bins") {
    write_run_json(dir, "benchmark", resolved);
    rep = eval::binned_error_suite(sim::read_dataset(a.dataset), ests, a.seed);
  } else if (a.suite == "order") {
    eval::OrderOptions o;
    o.per_K = a.per_k ? a.per_k : (a.paper_scale ? 2000 : 200);
    o.root_seed = a.seed;
    resolved["Ks"] = o.Ks;
    resolved["per_K"] = o.per_K;
    write_run_json(dir, "benchmark", resolved);
    rep = eval::order_accuracy_suite(eval::make_triplet_sets(o), ests, a.seed);
  } else if (a.suite == "indep") {
    eval::IndependenceOptions o;
    o.kind = sim::highdim_kind_from_string(a.kind);
    o.ds = a.dims;
    o.ns = a.lengths.empty() ? std::vector<std::size_t>{128} : a.lengths;
    o.trials = a.trials;
    o.root_seed = a.seed;
    resolved["kind"] = a.kind;
    resolved["dims"] = o.ds;
    resolved["lengths"] = o.ns;
    resolved["projections"] = a.projections;
    resolved["trials"] = o.trials;
    write_run_json(dir, "benchmark", resolved);
    rep = eval::independence_auc_suite(eval::sliced_scorer(ests.front(), a.projections, a.threads),
                                       ests.front().id, o);
  } else {
    eval::TimingOptions o;
    if (!a.lengths.empty()) o.lengths = a.lengths;
    o.repeats = a.repeats;
    o.root_seed = a.seed;
    resolved["lengths"] = o.lengths;
    resolved["repeats"] = o.repeats;
    resolved["batch"] = o.batch;
    write_run_json(dir, "benchmark", resolved);
    std::vector<eval::Estimator> plain;
    for (auto& e : ests) {
      if (e.id != "infonet") plain.push_back(e);
    }
    rep = eval::timing_suite(plain, o, model);
  }
  const auto stem = eval::write_report(dir, rep);
  std::printf("%s", rep.table_csv.empty() ? (rep.to_json().dump(2) + "\n").c_str() : rep.table_csv.c_str());
  std::printf("report: %s.{csv,json}\n", stem.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Amortised mutual-information estimation toolkit"};
  app.require_subcommand(0, 1);
  bool show_version = false;
  app.add_flag("--version", show_version, "Print toolkit and format versions");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train an estimator on simulated Gaussian mixtures");
  train_cmd->add_option("--config", train.config, "JSON file with optional \"model\" and \"train\" objects");
  train_cmd->add_option("--out", train.out, "Checkpoint path")->required();
  train_cmd->add_option("--steps", train.steps, "Override the step count");
  train_cmd->add_option("--seed", train.seed, "Override the root seed");
  train_cmd->add_option("--threads", train.threads, "Worker threads per step");
  train_cmd->add_option("--log", train.log, "Training-log CSV (default: <out>.log.csv)");
  train_cmd->add_option("--checkpoint-every", train.checkpoint_every, "Also save the checkpoint every N steps");
  train_cmd->add_flag("--resume", train.resume, "Not supported");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a leveled evaluation dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--levels", gen.levels, "Ground-truth MI levels in nats")->delimiter(',');
  gen_cmd->add_option("--tol", gen.tol, "Accept a distribution within this distance of its level");
  gen_cmd->add_option("--per-level", gen.per_level, "Records per level");
  gen_cmd->add_option("--T", gen.T, "Sequence length");
  gen_cmd->add_option("--seed", gen.seed, "Root seed");
  gen_cmd->add_option("--mci-samples", gen.mci_samples, "Monte-Carlo samples per ground truth");
  gen_cmd->add_flag("--paper-scale", gen.paper_scale, "Use the full record count");

  EstimateArgs est;
  auto* est_cmd = app.add_subcommand("estimate", "Estimate MI of one sequence or a dataset directory");
  est_cmd->add_option("--method", est.method, "infonet|mine|ksg|kde")
      ->required()
      ->check(CLI::IsMember({"infonet", "mine", "ksg", "kde"}));
  est_cmd->add_option("--model", est.model, "Checkpoint (infonet)");
  est_cmd->add_option("--input", est.input, ".bin sequence, two-column text, or dataset directory")->required();
  est_cmd->add_option("--k", est.k, "KSG neighbours");
  est_cmd->add_option("--iters", est.iters, "MINE iterations");
  est_cmd->add_option("--mine-batch", est.mine_batch, "MINE minibatch size");
  est_cmd->add_option("--copula", est.copula, "Rank-transform inputs first (on|off)")->check(CLI::IsMember({"on", "off"}));
  est_cmd->add_option("--batch", est.batch, "InfoNet batch size (prints one line per sequence)");
  est_cmd->add_option("--shuffles", est.shuffles, "Marginal shuffles averaged per InfoNet estimate");
  est_cmd->add_option("--seed", est.seed, "Seed");
  est_cmd->add_flag("--bits", est.bits, "Report bits instead of nats");
  est_cmd->add_option("--out", est.out, "Directory for run.json and estimates.csv");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("benchmark", "Run an evaluation suite");
  bench_cmd->add_option("--suite", bench.suite, "sanity|bins|order|indep|timing")->required();
  bench_cmd->add_option("--estimators", bench.estimators, "Comma list: infonet, ksg[-K], kde, mine[-ITERS]");
  bench_cmd->add_option("--out", bench.out, "Report directory")->required();
  bench_cmd->add_option("--model", bench.model, "Checkpoint for infonet");
  bench_cmd->add_option("--dataset", bench.dataset, "Dataset directory (bins)");
  bench_cmd->add_flag("--paper-scale", bench.paper_scale, "Use the full protocol counts");
  bench_cmd->add_option("--seed", bench.seed, "Root seed");
  bench_cmd->add_option("--threads", bench.threads, "Worker threads for sliced estimates");
  bench_cmd->add_option("--k", bench.k, "Default KSG neighbours");
  bench_cmd->add_option("--seeds", bench.seeds, "Sequences per rho (sanity)");
  bench_cmd->add_option("--per-k", bench.per_k, "Triplets per component count (order)");
  bench_cmd->add_option("--projections", bench.projections, "Random projections (indep)");
  bench_cmd->add_option("--trials", bench.trials, "Trials (indep)");
  bench_cmd->add_option("--kind", bench.kind, "one_feature|two_features|indep_coords (indep)");
  bench_cmd->add_option("--dims", bench.dims, "Dimensions (indep)")->delimiter(',');
  bench_cmd->add_option("--lengths", bench.lengths, "Sequence lengths (indep, timing)")->delimiter(',');
  bench_cmd->add_option("--repeats", bench.repeats, "Repeats per length (timing)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (show_version) {
      std::printf("infonet %s (checkpoint format %u, dataset format %d, report schema %d)\n", INFONET_VERSION,
                  net::kCheckpointVersion, sim::kDatasetFormatVersion, eval::kSchemaVersion);
      return 0;
    }
    if (*train_cmd) return run_train(train);
    if (*gen_cmd) return run_gen_data(gen);
    if (*est_cmd) return run_estimate(est);
    if (*bench_cmd) return run_benchmark(bench);
    std::cerr << app.help();
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
