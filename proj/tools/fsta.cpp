// fsta: learn a directed influence graph over multichannel time series by
// training a frequency-filtered spatiotemporal attention reconstructor,
// reading the graph off the fusion-attention weights, and scoring it.
//
// Subcommands: gen, train, estimate, eval, bench. Pipelines are reproducible:
// identical flags and seeds give byte-identical datasets, checkpoints, and
// result JSONs. Wall-clock timing lives only in train reports and in the
// run manifests written beside each artifact.
#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fsta/data.hpp"
#include "fsta/metrics.hpp"
#include "fsta/model.hpp"
#include "fsta/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
  kOk = 0,
  kUsageError = 2,
  kDataError = 3,
  kNumericError = 4,
};

// ---------------------------------------------------------------------------
// small IO helpers
// ---------------------------------------------------------------------------

void write_text(const std::string& path, const std::string& text) {
  if (fs::path(path).has_parent_path()) {
    fs::create_directories(fs::path(path).parent_path());
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw fsta::IoError("cannot write " + path);
  os << text;
  if (!os) throw fsta::IoError("write failed for " + path);
}

void write_json_file(const std::string& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw fsta::IoError("cannot open " + path);
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw fsta::IoError("unparsable JSON in " + path);
  return j;
}

/// Beside-the-artifact provenance record; the only output that carries
/// wall-clock time, so artifacts themselves stay byte-reproducible.
void write_run_manifest(const std::string& artifact, const std::string& command,
                        const json& flags, std::uint64_t seed,
                        const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs,
                        double seconds) {
  json m;
  m["command"] = command;
  m["flags"] = flags;
  m["seed"] = seed;
  m["tool_version"] = kToolVersion;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["wall_clock_s"] = seconds;
  std::string base = artifact;
  while (!base.empty() && (base.back() == '/' || base.back() == '\\')) {
    base.pop_back();
  }
  write_json_file(base + ".manifest.json", m);
}

std::size_t env_thread_cap() {
  const char* raw = std::getenv("FSTA_THREADS");
  if (!raw) return 1;
  const long v = std::strtol(raw, nullptr, 10);
  return v < 1 ? 1 : static_cast<std::size_t>(v);
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::istringstream is(csv);
  std::string cell;
  while (std::getline(is, cell, ',')) {
    if (cell.empty()) continue;
    out.push_back(std::stod(cell));
  }
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& csv) {
  std::vector<std::size_t> out;
  for (double v : parse_double_list(csv)) {
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenFlags {
  std::string out;
  fsta::GeneratorConfig cfg;
};

int run_gen(const GenFlags& f) {
  const auto t0 = std::chrono::steady_clock::now();
  fsta::TimeSeriesDataset ds = fsta::generate_var_dataset(f.cfg);
  fsta::save_dataset(ds, f.out);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  json flags = {{"topology", f.cfg.topology},
                {"subjects", f.cfg.n_subjects},
                {"points", f.cfg.n_points},
                {"snr_db", f.cfg.snr_db},
                {"edge_weight", f.cfg.edge_weight},
                {"self_weight", f.cfg.self_weight},
                {"radius_cap", f.cfg.spectral_radius_cap},
                {"burn_in", f.cfg.burn_in},
                {"seed", f.cfg.seed},
                {"out", f.out}};
  write_run_manifest(f.out, "gen", flags, f.cfg.seed, {}, {f.out}, secs);
  std::cout << "wrote " << ds.n_subjects() << " subjects ("
            << ds.n_nodes() << " nodes x " << ds.n_points()
            << " points, topology " << f.cfg.topology << ", "
            << (ds.truth ? ds.truth->edge_count() : 0) << " edges, SNR "
            << f.cfg.snr_db << " dB) to " << f.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainFlags {
  std::string data;
  std::string out;
  std::string report;
  std::size_t embed = 16;
  std::size_t heads = 2;
  std::size_t ffn_dim = 0;
  double dropout = 0.2;
  double pe_base = 10000.0;
  double alpha = 0.05;
  fsta::OptimizerConfig opt;
};

fsta::ModelConfig model_config_for(const TrainFlags& f,
                                   const fsta::TimeSeriesDataset& ds) {
  fsta::ModelConfig mc;
  mc.n_nodes = ds.n_nodes();
  mc.n_points = ds.n_points();
  mc.embed_dim = f.embed;
  mc.n_heads = f.heads;
  mc.ffn_dim = f.ffn_dim;
  mc.dropout_rate = f.dropout;
  mc.pe_base = f.pe_base;
  mc.sparsity_weight = f.alpha;
  mc.validate();
  return mc;
}

int run_train(const TrainFlags& f) {
  const auto t0 = std::chrono::steady_clock::now();
  fsta::TimeSeriesDataset ds = fsta::load_dataset(f.data);
  fsta::ModelConfig mc = model_config_for(f, ds);
  auto [params, report] = fsta::train(ds, mc, f.opt);
  fsta::save_checkpoint(f.out, mc.to_json(), params);
  const std::string report_path =
      f.report.empty() ? f.out + ".report.json" : f.report;
  write_json_file(report_path, report.to_json());
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  json flags = {{"data", f.data},         {"out", f.out},
                {"report", report_path},  {"epochs", f.opt.epochs},
                {"batch", f.opt.batch_size}, {"embed", f.embed},
                {"heads", f.heads},       {"ffn_dim", f.ffn_dim},
                {"dropout", f.dropout},   {"pe_base", f.pe_base},
                {"alpha", f.alpha},       {"lr", f.opt.learning_rate},
                {"beta1", f.opt.beta1},   {"beta2", f.opt.beta2},
                {"eps", f.opt.eps},       {"seed", f.opt.seed}};
  write_run_manifest(f.out, "train", flags, f.opt.seed, {f.data},
                     {f.out, report_path}, secs);
  std::cout << "trained " << f.opt.epochs << " epochs on "
            << ds.n_subjects() << " subjects; first-epoch loss "
            << report.epoch_losses.front() << ", final loss "
            << report.final_loss << "; checkpoint " << f.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

struct EstimateFlags {
  std::string checkpoint;
  std::string data;
  std::string out;
  double eta = 0.5;
};

json estimate_json(const fsta::Tensor& a, double eta) {
  const double theta = fsta::adaptive_threshold(a, eta);
  fsta::BinaryGraph bin = fsta::binarize(a, theta);
  json out;
  out["a"] = std::vector<double>(a.data(), a.data() + a.numel());
  out["theta"] = theta;
  out["eta"] = eta;
  std::vector<int> bits;
  bits.reserve(bin.adjacency.numel());
  for (std::size_t i = 0; i < bin.adjacency.numel(); ++i) {
    bits.push_back(bin.adjacency[i] != 0.0 ? 1 : 0);
  }
  out["binary"] = bits;
  return out;
}

int run_estimate(const EstimateFlags& f) {
  const auto t0 = std::chrono::steady_clock::now();
  fsta::Checkpoint ck = fsta::load_checkpoint(f.checkpoint);
  fsta::ModelConfig mc = fsta::ModelConfig::from_json(ck.config);
  fsta::TimeSeriesDataset ds = fsta::load_dataset(f.data);
  if (ds.n_nodes() != mc.n_nodes || ds.n_points() != mc.n_points) {
    throw fsta::ShapeError(
        "dataset is " + std::to_string(ds.n_nodes()) + " nodes x " +
        std::to_string(ds.n_points()) + " points but the checkpoint was " +
        "trained for " + std::to_string(mc.n_nodes) + " x " +
        std::to_string(mc.n_points));
  }
  fsta::Tensor a = fsta::evaluate_ec(ds, ck.params, mc);
  write_json_file(f.out, estimate_json(a, f.eta));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  json flags = {{"checkpoint", f.checkpoint},
                {"data", f.data},
                {"out", f.out},
                {"eta", f.eta}};
  write_run_manifest(f.out, "estimate", flags, 0, {f.checkpoint, f.data},
                     {f.out}, secs);
  std::cout << "estimated " << mc.n_nodes << "-node connectivity (eta "
            << f.eta << ") -> " << f.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalFlags {
  std::string pred;
  std::string truth;
  std::string out;
};

int run_eval(const EvalFlags& f) {
  const auto t0 = std::chrono::steady_clock::now();
  json pred = read_json_file(f.pred);
  const std::vector<int> bits = pred.at("binary").get<std::vector<int>>();
  std::size_t n = 0;
  while (n * n < bits.size()) ++n;
  if (n * n != bits.size()) {
    throw fsta::ShapeError("prediction 'binary' length " +
                           std::to_string(bits.size()) +
                           " is not a square matrix");
  }
  fsta::BinaryGraph g;
  g.n_nodes = n;
  g.adjacency = fsta::Tensor({n, n});
  for (std::size_t i = 0; i < bits.size(); ++i) {
    g.adjacency[i] = bits[i] ? 1.0 : 0.0;
  }
  fsta::GroundTruthGraph truth = fsta::load_truth_csv(f.truth);
  fsta::MetricsReport report = fsta::compute_metrics(g, truth);
  report.theta = pred.value("theta", 0.0);
  report.eta = pred.value("eta", 0.0);
  write_json_file(f.out, report.to_json());
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  json flags = {{"pred", f.pred}, {"truth", f.truth}, {"out", f.out}};
  write_run_manifest(f.out, "eval", flags, 0, {f.pred, f.truth}, {f.out},
                     secs);
  std::cout << "precision " << report.precision << ", recall "
            << report.recall << ", f1 " << report.f1 << ", accuracy "
            << report.accuracy << ", shd " << report.shd << " -> " << f.out
            << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchFlags {
  std::string data;
  std::string out;
  std::string compare;
  std::string artifacts_dir;
  std::size_t runs = 20;
  double eta = 0.5;
  std::string eta_grid;
  std::string heads_grid;
  TrainFlags train;  // shared hyperparameters; train.opt.seed is the base seed
};

struct BenchRunResult {
  std::uint64_t seed = 0;
  std::size_t heads = 0;
  bool ok = false;
  std::string error;
  fsta::MetricsReport metrics;                  // at the primary eta
  std::vector<fsta::MetricsReport> per_eta;     // aligned with eta grid
  double first_epoch_loss = 0.0;
  double final_loss = 0.0;
};

json aggregate_to_json(const std::vector<fsta::MetricsReport>& reports) {
  return fsta::aggregate_runs(reports).to_json();
}

std::string aggregate_to_table(const fsta::RunAggregate& agg) {
  char buf[64];
  std::ostringstream os;
  auto row = [&](const char* name, const fsta::MetricAggregate& m) {
    std::snprintf(buf, sizeof buf, "  %-9s %.2f+-%.2f\n", name, m.mean,
                  m.stddev);
    os << buf;
  };
  row("precision", agg.precision);
  row("recall", agg.recall);
  row("f1", agg.f1);
  row("accuracy", agg.accuracy);
  row("shd", agg.shd);
  return os.str();
}

int run_bench(const BenchFlags& f) {
  const auto t0 = std::chrono::steady_clock::now();
  if (f.runs < 1) throw fsta::ValueError("--runs must be >= 1");
  fsta::TimeSeriesDataset ds = fsta::load_dataset(f.data);
  if (!ds.truth) {
    throw fsta::IoError("bench requires a dataset with truth.csv");
  }
  std::vector<double> etas = f.eta_grid.empty()
                                 ? std::vector<double>{}
                                 : parse_double_list(f.eta_grid);
  std::vector<std::size_t> heads_values =
      f.heads_grid.empty() ? std::vector<std::size_t>{f.train.heads}
                           : parse_size_list(f.heads_grid);

  struct Job {
    std::size_t heads;
    std::uint64_t seed;
    std::size_t slot;
  };
  std::vector<Job> jobs;
  std::vector<BenchRunResult> results(heads_values.size() * f.runs);
  for (std::size_t hi = 0; hi < heads_values.size(); ++hi) {
    for (std::size_t r = 0; r < f.runs; ++r) {
      jobs.push_back(Job{heads_values[hi], f.train.opt.seed + r,
                         hi * f.runs + r});
    }
  }

  const std::size_t n_threads = std::min(env_thread_cap(), jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs.size()) return;
      const Job& job = jobs[k];
      BenchRunResult& slot = results[job.slot];
      slot.seed = job.seed;
      slot.heads = job.heads;
      try {
        TrainFlags tf = f.train;
        tf.heads = job.heads;
        tf.opt.seed = job.seed;
        fsta::ModelConfig mc = model_config_for(tf, ds);
        auto [params, report] = fsta::train(ds, mc, tf.opt);
        fsta::Tensor a = fsta::extract_ec(ds, params, mc);
        auto score = [&](double eta) {
          fsta::MetricsReport m = fsta::compute_metrics(
              fsta::binarize(a, fsta::adaptive_threshold(a, eta)), *ds.truth);
          m.theta = fsta::adaptive_threshold(a, eta);
          m.eta = eta;
          return m;
        };
        slot.metrics = score(f.eta);
        for (double eta : etas) slot.per_eta.push_back(score(eta));
        slot.first_epoch_loss = report.epoch_losses.front();
        slot.final_loss = report.final_loss;
        slot.ok = true;
        if (!f.artifacts_dir.empty()) {
          fs::create_directories(f.artifacts_dir);
          const std::string stem = f.artifacts_dir + "/run_h" +
                                   std::to_string(job.heads) + "_s" +
                                   std::to_string(job.seed);
          fsta::save_checkpoint(stem + ".fsta", mc.to_json(), params);
          write_json_file(stem + ".report.json", report.to_json());
          write_json_file(stem + ".ec.json", estimate_json(a, f.eta));
        }
      } catch (const std::exception& e) {
        slot.ok = false;
        slot.error = e.what();
      }
    }
  };
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  json out;
  out["data"] = f.data;
  out["runs"] = f.runs;
  out["seed"] = f.train.opt.seed;
  out["eta"] = f.eta;
  json per_run = json::array();
  std::size_t failures = 0;
  for (const BenchRunResult& r : results) {
    json jr = {{"seed", r.seed}, {"heads", r.heads}, {"ok", r.ok}};
    if (r.ok) {
      jr["metrics"] = r.metrics.to_json();
      jr["first_epoch_loss"] = r.first_epoch_loss;
      jr["final_loss"] = r.final_loss;
    } else {
      jr["error"] = r.error;
      ++failures;
    }
    per_run.push_back(std::move(jr));
  }
  out["per_run"] = std::move(per_run);

  std::ostringstream table;
  auto collect = [&results](std::size_t heads, double eta,
                            const std::vector<double>& etas_list) {
    std::vector<fsta::MetricsReport> reports;
    for (const BenchRunResult& r : results) {
      if (!r.ok || r.heads != heads) continue;
      if (eta < 0.0) {
        reports.push_back(r.metrics);
      } else {
        for (std::size_t i = 0; i < etas_list.size(); ++i) {
          if (etas_list[i] == eta) reports.push_back(r.per_eta[i]);
        }
      }
    }
    return reports;
  };

  if (failures < results.size()) {
    json heads_agg = json::array();
    for (std::size_t heads : heads_values) {
      auto reports = collect(heads, -1.0, etas);
      if (reports.empty()) continue;
      fsta::RunAggregate agg = fsta::aggregate_runs(reports);
      heads_agg.push_back(
          {{"heads", heads}, {"aggregate", agg.to_json()}});
      table << "heads=" << heads << " eta=" << f.eta << " ("
            << reports.size() << " runs)\n"
            << aggregate_to_table(agg);
    }
    if (f.heads_grid.empty()) {
      out["aggregate"] = heads_agg[0]["aggregate"];
    } else {
      out["heads_grid"] = heads_agg;
    }
    if (!etas.empty()) {
      json eta_agg = json::array();
      for (double eta : etas) {
        auto reports = collect(heads_values[0], eta, etas);
        if (reports.empty()) continue;
        fsta::RunAggregate agg = fsta::aggregate_runs(reports);
        eta_agg.push_back({{"eta", eta}, {"aggregate", agg.to_json()}});
        table << "eta=" << eta << " (heads=" << heads_values[0] << ")\n"
              << aggregate_to_table(agg);
      }
      out["eta_grid"] = eta_agg;
    }
  }

  if (!f.compare.empty()) {
    json other = read_json_file(f.compare);
    auto sample = [](const json& bench, auto getter) {
      std::vector<double> xs;
      for (const json& r : bench.at("per_run")) {
        if (r.at("ok").get<bool>()) xs.push_back(getter(r.at("metrics")));
      }
      return xs;
    };
    json self_doc = out;
    json p_values;
    auto add_p = [&](const char* key) {
      auto a = sample(self_doc, [key](const json& m) {
        return m.at(key).get<double>();
      });
      auto b = sample(other, [key](const json& m) {
        return m.at(key).get<double>();
      });
      try {
        p_values[key] = fsta::welch_t_test(a, b);
      } catch (const fsta::ValueError&) {
        p_values[key] = nullptr;  // degenerate variance on both sides
      }
    };
    add_p("precision");
    add_p("recall");
    add_p("f1");
    add_p("accuracy");
    add_p("shd");
    out["compare_p_values"] = std::move(p_values);
  }

  write_json_file(f.out, out);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  json flags = {{"data", f.data},       {"out", f.out},
                {"runs", f.runs},       {"eta", f.eta},
                {"eta_grid", f.eta_grid}, {"heads_grid", f.heads_grid},
                {"compare", f.compare}, {"epochs", f.train.opt.epochs},
                {"batch", f.train.opt.batch_size}, {"embed", f.train.embed},
                {"heads", f.train.heads}, {"dropout", f.train.dropout},
                {"alpha", f.train.alpha}, {"lr", f.train.opt.learning_rate},
                {"seed", f.train.opt.seed}};
  write_run_manifest(f.out, "bench", flags, f.train.opt.seed, {f.data},
                     {f.out}, secs);
  std::cout << table.str();
  if (failures > 0) {
    std::cerr << failures << " of " << results.size() << " runs failed\n";
    for (const BenchRunResult& r : results) {
      if (!r.ok) std::cerr << "  seed " << r.seed << ": " << r.error << "\n";
    }
  }
  std::cout << "wrote " << f.out << "\n";
  return failures == results.size() ? kNumericError : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"frequency-filtered spatiotemporal attention for directed "
               "influence graphs over multichannel time series"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  GenFlags gen;
  CLI::App* cgen = app.add_subcommand(
      "gen", "generate a VAR benchmark dataset with a known graph");
  cgen->add_option("--out", gen.out, "output dataset directory")->required();
  cgen->add_option("--topology", gen.cfg.topology,
                   "sim1|sim2|sim3|sim4 preset");
  cgen->add_option("--subjects", gen.cfg.n_subjects, "number of subjects");
  cgen->add_option("--points", gen.cfg.n_points, "time points per subject");
  cgen->add_option("--snr-db", gen.cfg.snr_db, "observation noise level");
  cgen->add_option("--edge-weight", gen.cfg.edge_weight, "VAR edge weight");
  cgen->add_option("--self-weight", gen.cfg.self_weight, "VAR self weight");
  cgen->add_option("--radius-cap", gen.cfg.spectral_radius_cap,
                   "spectral radius cap in (0,1)");
  cgen->add_option("--burn-in", gen.cfg.burn_in, "discarded leading steps");
  cgen->add_option("--seed", gen.cfg.seed, "master seed");

  auto add_train_flags = [](CLI::App* cmd, TrainFlags& tf) {
    cmd->add_option("--epochs", tf.opt.epochs, "training epochs");
    cmd->add_option("--batch", tf.opt.batch_size, "mini-batch size");
    cmd->add_option("--embed", tf.embed, "embedding width D");
    cmd->add_option("--heads", tf.heads, "attention heads H");
    cmd->add_option("--ffn-dim", tf.ffn_dim,
                    "feedforward hidden width (0 = 4*embed)");
    cmd->add_option("--dropout", tf.dropout, "dropout rate");
    cmd->add_option("--pe-base", tf.pe_base, "positional encoding base");
    cmd->add_option("--alpha", tf.alpha, "sparsity weight in the loss");
    cmd->add_option("--lr", tf.opt.learning_rate, "Adam learning rate");
    cmd->add_option("--beta1", tf.opt.beta1, "Adam first-moment decay");
    cmd->add_option("--beta2", tf.opt.beta2, "Adam second-moment decay");
    cmd->add_option("--eps", tf.opt.eps, "Adam epsilon");
    cmd->add_option("--seed", tf.opt.seed, "training seed");
  };

  TrainFlags train;
  CLI::App* ctrain = app.add_subcommand(
      "train", "train the reconstruction model on a dataset");
  ctrain->add_option("--data", train.data, "dataset directory")->required();
  ctrain->add_option("--out", train.out, "checkpoint output path")->required();
  ctrain->add_option("--report", train.report,
                     "training report path (default <out>.report.json)");
  add_train_flags(ctrain, train);

  EstimateFlags est;
  CLI::App* cest = app.add_subcommand(
      "estimate", "extract and threshold the connectivity estimate");
  cest->add_option("--checkpoint", est.checkpoint, "trained checkpoint")
      ->required();
  cest->add_option("--data", est.data, "dataset directory")->required();
  cest->add_option("--out", est.out, "output JSON path")->required();
  cest->add_option("--eta", est.eta, "adaptive threshold knob in [0,1]");

  EvalFlags ev;
  CLI::App* cev = app.add_subcommand(
      "eval", "score a prediction against a ground-truth graph");
  cev->add_option("--pred", ev.pred, "estimate JSON")->required();
  cev->add_option("--truth", ev.truth, "truth CSV")->required();
  cev->add_option("--out", ev.out, "metrics JSON output")->required();

  BenchFlags bench;
  CLI::App* cbench = app.add_subcommand(
      "bench", "multi-seed train/estimate/eval cycles with aggregation");
  cbench->add_option("--data", bench.data, "dataset directory")->required();
  cbench->add_option("--out", bench.out, "aggregate JSON output")->required();
  cbench->add_option("--runs", bench.runs, "number of seeded runs");
  cbench->add_option("--eta", bench.eta, "primary threshold knob");
  cbench->add_option("--eta-grid", bench.eta_grid,
                     "comma list of extra eta values to score");
  cbench->add_option("--heads-grid", bench.heads_grid,
                     "comma list of head counts to sweep (full retrain each)");
  cbench->add_option("--compare", bench.compare,
                     "another bench JSON for Welch t-tests");
  cbench->add_option("--artifacts-dir", bench.artifacts_dir,
                     "keep per-run checkpoints/reports here");
  add_train_flags(cbench, bench.train);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (cgen->parsed()) return run_gen(gen);
    if (ctrain->parsed()) return run_train(train);
    if (cest->parsed()) return run_estimate(est);
    if (cev->parsed()) return run_eval(ev);
    if (cbench->parsed()) return run_bench(bench);
    std::cerr << "no subcommand selected\n";
    return kUsageError;
  } catch (const fsta::ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const fsta::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const fsta::ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const fsta::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
}
