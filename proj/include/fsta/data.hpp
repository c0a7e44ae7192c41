#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fsta/rng.hpp"
#include "fsta/tensor.hpp"

namespace fsta {

/// Known directed graph behind a benchmark dataset. adjacency(i,j) = 1 means
/// an edge j -> i (column influences row); the diagonal is structurally zero.
struct GroundTruthGraph {
  std::size_t n_nodes = 0;
  Tensor adjacency;  // [N,N] of {0,1}

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < adjacency.numel(); ++i) {
      if (adjacency[i] != 0.0) ++n;
    }
    return n;
  }

  bool has_edge(std::size_t to, std::size_t from) const {
    return adjacency.at({to, from}) != 0.0;
  }
};

/// sim1..sim3: 5-node directed ring plus one or two reciprocal edges forming
/// 2-cycles (6/7/7 edges). sim4: 10-node ring plus 9 seeded-random extra
/// edges, 19 total. Edge counts match the benchmark regime exactly.
inline GroundTruthGraph make_topology(const std::string& preset,
                                      std::uint64_t seed) {
  auto ring = [](std::size_t n) {
    GroundTruthGraph g;
    g.n_nodes = n;
    g.adjacency = Tensor({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      g.adjacency.at({(i + 1) % n, i}) = 1.0;  // i -> i+1
    }
    return g;
  };
  if (preset == "sim1") {
    GroundTruthGraph g = ring(5);
    g.adjacency.at({0, 1}) = 1.0;  // 1 -> 0 closes a 2-cycle with 0 -> 1
    return g;
  }
  if (preset == "sim2") {
    GroundTruthGraph g = ring(5);
    g.adjacency.at({0, 1}) = 1.0;  // 2-cycles (0,1) and (1,2) share node 1
    g.adjacency.at({1, 2}) = 1.0;
    return g;
  }
  if (preset == "sim3") {
    GroundTruthGraph g = ring(5);
    g.adjacency.at({0, 1}) = 1.0;  // disjoint 2-cycles (0,1) and (2,3)
    g.adjacency.at({2, 3}) = 1.0;
    return g;
  }
  if (preset == "sim4") {
    GroundTruthGraph g = ring(10);
    Rng rng(seed);
    std::size_t added = 0;
    while (added < 9) {
      const std::size_t from = rng.uniform_index(10);
      const std::size_t to = rng.uniform_index(10);
      if (from == to || g.adjacency.at({to, from}) != 0.0) continue;
      g.adjacency.at({to, from}) = 1.0;
      ++added;
    }
    return g;
  }
  throw ValueError("unknown topology preset: " + preset);
}

struct GeneratorConfig {
  std::string topology = "sim1";  // sim1|sim2|sim3|sim4|custom
  std::size_t n_subjects = 60;
  std::size_t n_points = 500;
  double snr_db = 2.0;
  double edge_weight = 0.4;
  double self_weight = 0.3;
  double spectral_radius_cap = 0.8;
  std::size_t burn_in = 200;
  std::uint64_t seed = 42;

  void validate() const {
    if (n_points < 2) throw ValueError("n_points must be >= 2");
    if (n_subjects < 1) throw ValueError("n_subjects must be >= 1");
    if (!std::isfinite(snr_db)) throw ValueError("snr_db must be finite");
    if (spectral_radius_cap <= 0.0 || spectral_radius_cap >= 1.0) {
      throw ValueError("spectral_radius_cap must be in (0, 1)");
    }
  }
};

/// Per-subject [N,T] series plus the generating graph when known.
struct TimeSeriesDataset {
  std::vector<Tensor> subjects;
  std::optional<GroundTruthGraph> truth;
  std::string topology = "custom";
  std::uint64_t seed = 0;
  double snr_db = 0.0;

  std::size_t n_subjects() const { return subjects.size(); }
  std::size_t n_nodes() const {
    return subjects.empty() ? 0 : subjects[0].extent(0);
  }
  std::size_t n_points() const {
    return subjects.empty() ? 0 : subjects[0].extent(1);
  }
};

/// Adds white Gaussian observation noise per node, sized so that
/// signal_power / noise_power hits the requested dB value.
inline Tensor add_noise_snr(const Tensor& x, double snr_db, Rng& rng) {
  if (!std::isfinite(snr_db)) throw ValueError("snr_db must be finite");
  if (x.rank() != 2) throw ShapeError("add_noise_snr expects [N,T]");
  const std::size_t n = x.extent(0), t_len = x.extent(1);
  Tensor out = x;
  for (std::size_t i = 0; i < n; ++i) {
    double power = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
      const double v = x.at({i, t});
      power += v * v;
    }
    power /= static_cast<double>(t_len);
    if (power == 0.0) {
      throw ValueError("add_noise_snr: node " + std::to_string(i) +
                       " has zero signal power");
    }
    const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
    for (std::size_t t = 0; t < t_len; ++t) {
      out.at({i, t}) += sigma * rng.normal();
    }
  }
  return out;
}

namespace detail {

/// Spectral-radius estimate of a nonnegative matrix from the average log
/// growth rate of repeated application; robust to the rotating eigenvalues
/// of periodic ring graphs.
inline double spectral_radius_estimate(const Tensor& w) {
  const std::size_t n = w.extent(0);
  DoubleVec v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  DoubleVec next(n);
  double log_acc = 0.0;
  int counted = 0;
  const int warmup = 100, measured = 100;
  for (int iter = 0; iter < warmup + measured; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += w.at({i, j}) * v[j];
      next[i] = s;
    }
    double norm = 0.0;
    for (double x : next) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) v[i] = next[i] / norm;
    if (iter >= warmup) {
      log_acc += std::log(norm);
      ++counted;
    }
  }
  return std::exp(log_acc / counted);
}

/// One standardized (zero mean, unit population variance per node) VAR(1)
/// realization before observation noise.
inline Tensor var_series_standardized(const Tensor& w, std::size_t t_len,
                                      std::size_t burn_in, Rng& rng) {
  const std::size_t n = w.extent(0);
  DoubleVec state(n), next(n);
  for (std::size_t i = 0; i < n; ++i) state[i] = rng.normal();
  Tensor out({n, t_len});
  const std::size_t total = burn_in + t_len;
  for (std::size_t t = 1; t < total; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = rng.normal();
      for (std::size_t j = 0; j < n; ++j) s += w.at({i, j}) * state[j];
      next[i] = s;
    }
    state.swap(next);
    if (t + t_len >= total) {
      const std::size_t col = t + t_len - total;
      for (std::size_t i = 0; i < n; ++i) out.at({i, col}) = state[i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) mean += out.at({i, t});
    mean /= static_cast<double>(t_len);
    double var = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
      const double c = out.at({i, t}) - mean;
      var += c * c;
    }
    var /= static_cast<double>(t_len);
    if (var == 0.0) {
      throw ValueError("var_series: node " + std::to_string(i) +
                       " is constant, cannot standardize");
    }
    const double inv = 1.0 / std::sqrt(var);
    for (std::size_t t = 0; t < t_len; ++t) {
      out.at({i, t}) = (out.at({i, t}) - mean) * inv;
    }
  }
  return out;
}

inline void format_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace detail

/// VAR(1) surrogate for a known graph: x_t = W x_{t-1} + eps_t with unit
/// Gaussian innovations, W = self_weight*I + edge_weight*adjacency rescaled
/// to the spectral-radius cap when needed; burn-in discarded, per-node
/// standardization, then observation noise at the configured SNR. Subject s
/// draws from the substream fork(s) of the master seed.
inline TimeSeriesDataset generate_var_dataset(const GeneratorConfig& cfg,
                                              const GroundTruthGraph& graph) {
  cfg.validate();
  const std::size_t n = graph.n_nodes;
  Tensor w({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      w.at({i, j}) = cfg.edge_weight * graph.adjacency.at({i, j});
    }
    w.at({i, i}) += cfg.self_weight;
  }
  const double radius = detail::spectral_radius_estimate(w);
  if (radius >= cfg.spectral_radius_cap) {
    const double rescale = cfg.spectral_radius_cap / radius;
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] *= rescale;
  }

  TimeSeriesDataset ds;
  ds.truth = graph;
  ds.topology = cfg.topology;
  ds.seed = cfg.seed;
  ds.snr_db = cfg.snr_db;
  Rng master(cfg.seed);
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    Rng subject_rng = master.fork(s);
    Tensor series = detail::var_series_standardized(w, cfg.n_points,
                                                    cfg.burn_in, subject_rng);
    ds.subjects.push_back(add_noise_snr(series, cfg.snr_db, subject_rng));
  }
  return ds;
}

inline TimeSeriesDataset generate_var_dataset(const GeneratorConfig& cfg) {
  if (cfg.topology == "custom") {
    throw ValueError(
        "topology 'custom' needs an explicit graph; pass one or use a preset");
  }
  return generate_var_dataset(cfg, make_topology(cfg.topology, cfg.seed));
}

// ---------------------------------------------------------------------------
// Dataset directory format
// ---------------------------------------------------------------------------
// manifest.json {n_nodes,n_points,n_subjects,snr_db,topology,seed}
// truth.csv     N rows x N cols of 0/1 (row i col j = edge j->i); optional
// subject_XYZ.csv  header n0..n{N-1}, one row per time point, %.17g values

namespace detail {

inline std::string subject_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "subject_%03zu.csv", index);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace detail

inline void save_dataset(const TimeSeriesDataset& ds, const std::string& dir) {
  if (ds.subjects.empty()) throw ValueError("save_dataset: empty dataset");
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::size_t n = ds.n_nodes();
  const std::size_t t_len = ds.n_points();

  nlohmann::json manifest;
  manifest["n_nodes"] = n;
  manifest["n_points"] = t_len;
  manifest["n_subjects"] = ds.n_subjects();
  manifest["snr_db"] = ds.snr_db;
  manifest["topology"] = ds.topology;
  manifest["seed"] = ds.seed;
  {
    std::ofstream os(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!os) throw IoError("cannot write manifest.json in " + dir);
    os << manifest.dump(2) << '\n';
  }

  if (ds.truth) {
    std::ofstream os(fs::path(dir) / "truth.csv", std::ios::binary);
    if (!os) throw IoError("cannot write truth.csv in " + dir);
    for (std::size_t i = 0; i < n; ++i) {
      std::string line;
      for (std::size_t j = 0; j < n; ++j) {
        if (j) line += ',';
        line += ds.truth->adjacency.at({i, j}) != 0.0 ? '1' : '0';
      }
      os << line << '\n';
    }
  }

  for (std::size_t s = 0; s < ds.subjects.size(); ++s) {
    const Tensor& x = ds.subjects[s];
    if (x.extent(0) != n || x.extent(1) != t_len) {
      throw ShapeError("save_dataset: subject " + std::to_string(s) +
                       " shape " + shape_str(x.shape()) + " differs");
    }
    std::ofstream os(fs::path(dir) / detail::subject_file_name(s),
                     std::ios::binary);
    if (!os) throw IoError("cannot write subject file in " + dir);
    std::string line;
    for (std::size_t j = 0; j < n; ++j) {
      if (j) line += ',';
      line += 'n';
      line += std::to_string(j);
    }
    os << line << '\n';
    for (std::size_t t = 0; t < t_len; ++t) {
      line.clear();
      for (std::size_t j = 0; j < n; ++j) {
        if (j) line += ',';
        detail::format_double(line, x.at({j, t}));
      }
      os << line << '\n';
    }
  }
}

/// N x N comma-separated 0/1 matrix, row i col j = edge j -> i, no header.
inline GroundTruthGraph load_truth_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    std::vector<double> row;
    for (const std::string& c : cells) {
      if (c != "0" && c != "1") {
        throw IoError(path + ": entries must be 0 or 1, got '" + c + "'");
      }
      row.push_back(c == "1" ? 1.0 : 0.0);
    }
    rows.push_back(std::move(row));
  }
  const std::size_t n = rows.size();
  if (n == 0) throw IoError(path + ": empty adjacency file");
  GroundTruthGraph g;
  g.n_nodes = n;
  g.adjacency = Tensor({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n) {
      throw IoError(path + ": row " + std::to_string(i) +
                    " has wrong column count");
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j && rows[i][j] != 0.0) {
        throw IoError(path + ": nonzero diagonal at " + std::to_string(i));
      }
      g.adjacency.at({i, j}) = rows[i][j];
    }
  }
  return g;
}

inline TimeSeriesDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  std::ifstream mis(root / "manifest.json");
  if (!mis) throw IoError("missing manifest.json in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(mis, nullptr, false);
  if (manifest.is_discarded()) throw IoError("unparsable manifest.json in " + dir);
  for (const char* key :
       {"n_nodes", "n_points", "n_subjects", "snr_db", "topology", "seed"}) {
    if (!manifest.contains(key)) {
      throw IoError("manifest.json missing key '" + std::string(key) + "'");
    }
  }
  const std::size_t n = manifest["n_nodes"].get<std::size_t>();
  const std::size_t t_len = manifest["n_points"].get<std::size_t>();
  const std::size_t n_subjects = manifest["n_subjects"].get<std::size_t>();

  std::size_t present = 0;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("subject_", 0) == 0 && name.size() > 4 &&
        name.substr(name.size() - 4) == ".csv") {
      ++present;
    }
  }
  if (present != n_subjects) {
    throw IoError("manifest says " + std::to_string(n_subjects) +
                  " subjects but " + std::to_string(present) +
                  " subject CSVs are present in " + dir);
  }

  TimeSeriesDataset ds;
  ds.topology = manifest["topology"].get<std::string>();
  ds.seed = manifest["seed"].get<std::uint64_t>();
  ds.snr_db = manifest["snr_db"].get<double>();

  for (std::size_t s = 0; s < n_subjects; ++s) {
    const std::string fname = detail::subject_file_name(s);
    std::ifstream is(root / fname);
    if (!is) throw IoError("missing " + fname + " in " + dir);
    std::string line;
    if (!std::getline(is, line)) throw IoError(fname + ": missing header row");
    if (detail::split_csv_line(line).size() != n) {
      throw IoError(fname + ": header has wrong column count");
    }
    Tensor x({n, t_len});
    for (std::size_t t = 0; t < t_len; ++t) {
      if (!std::getline(is, line)) {
        throw IoError(fname + ": truncated at row " + std::to_string(t));
      }
      auto cells = detail::split_csv_line(line);
      if (cells.size() != n) {
        throw IoError(fname + ": row " + std::to_string(t) +
                      " has wrong column count");
      }
      for (std::size_t j = 0; j < n; ++j) {
        try {
          x.at({j, t}) = std::stod(cells[j]);
        } catch (const std::exception&) {
          throw IoError(fname + ": unparsable value '" + cells[j] + "'");
        }
        if (!std::isfinite(x.at({j, t}))) {
          throw IoError(fname + ": non-finite value at row " +
                        std::to_string(t));
        }
      }
    }
    if (std::getline(is, line) && !line.empty()) {
      throw IoError(fname + ": more rows than manifest n_points");
    }
    ds.subjects.push_back(std::move(x));
  }

  if (fs::exists(root / "truth.csv")) {
    GroundTruthGraph g = load_truth_csv((root / "truth.csv").string());
    if (g.n_nodes != n) {
      throw IoError("truth.csv has " + std::to_string(g.n_nodes) +
                    " nodes, manifest says " + std::to_string(n));
    }
    ds.truth = std::move(g);
  }
  return ds;
}

}  // namespace fsta
