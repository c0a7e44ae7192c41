// End-to-end checks of the fsta binary: real subprocesses, real files.
#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#ifndef FSTA_CLI_PATH
#error "FSTA_CLI_PATH must point at the built binary"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = FSTA_CLI_PATH;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& rel) const {
    return (path / rel).string();
  }
};

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    out[e.path().filename().string()] = read_bytes(e.path());
  }
  return out;
}

json load(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  return json::parse(is);
}

}  // namespace

TEST_CASE("gen writes a complete, reproducible dataset") {
  TempDir tmp("fsta_cli_gen");
  const std::string d1 = tmp / "d1", d2 = tmp / "d2";
  REQUIRE(run("gen --out " + d1 +
              " --topology sim1 --subjects 3 --points 16 --burn-in 10 "
              "--seed 9") == 0);
  REQUIRE(fs::exists(fs::path(d1) / "manifest.json"));
  REQUIRE(fs::exists(fs::path(d1) / "truth.csv"));
  REQUIRE(fs::exists(fs::path(d1) / "subject_000.csv"));
  REQUIRE(fs::exists(fs::path(d1) / "subject_002.csv"));
  REQUIRE(fs::exists(d1 + ".manifest.json"));

  REQUIRE(run("gen --out " + d2 +
              " --topology sim1 --subjects 3 --points 16 --burn-in 10 "
              "--seed 9") == 0);
  REQUIRE(dir_bytes(d1) == dir_bytes(d2));

  // sim4 flag pass-through: 10 columns, 5 rows of header + 20 points
  const std::string d3 = tmp / "d3";
  REQUIRE(run("gen --out " + d3 +
              " --topology sim4 --subjects 2 --points 20 --burn-in 10") == 0);
  json manifest = load(d3 + "/manifest.json");
  REQUIRE(manifest["n_nodes"] == 10);
  REQUIRE(manifest["n_subjects"] == 2);

  REQUIRE(run("gen --out " + (tmp / "bad") + " --topology sim9") == 2);
  REQUIRE(run("gen --no-such-flag x") == 2);
}

TEST_CASE("train, estimate, eval round trip") {
  TempDir tmp("fsta_cli_pipe");
  const std::string data = tmp / "data";
  REQUIRE(run("gen --out " + data +
              " --topology sim1 --subjects 4 --points 32 --burn-in 16 "
              "--seed 3") == 0);

  const std::string ck = tmp / "model.fsta";
  REQUIRE(run("train --data " + data + " --out " + ck +
              " --epochs 2 --batch 4 --embed 8 --seed 42") == 0);
  REQUIRE(fs::exists(ck));
  json report = load(ck + ".report.json");
  REQUIRE(report["epoch_losses"].size() == 2);
  REQUIRE(report["final_loss"].is_number());

  const std::string ec = tmp / "ec.json";
  REQUIRE(run("estimate --checkpoint " + ck + " --data " + data + " --out " +
              ec) == 0);
  json est = load(ec);
  REQUIRE(est["a"].size() == 25);
  REQUIRE(est["binary"].size() == 25);
  for (std::size_t i = 0; i < 5; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      row += est["a"][i * 5 + j].get<double>();
    }
    REQUIRE(std::abs(row - 1.0) < 1e-6);
  }

  // re-running estimate is byte-identical
  const std::string ec2 = tmp / "ec2.json";
  REQUIRE(run("estimate --checkpoint " + ck + " --data " + data + " --out " +
              ec2) == 0);
  REQUIRE(read_bytes(ec) == read_bytes(ec2));

  // eta 1.0 keeps only maximal off-diagonal entries
  const std::string ec_top = tmp / "ec_top.json";
  REQUIRE(run("estimate --checkpoint " + ck + " --data " + data + " --out " +
              ec_top + " --eta 1.0") == 0);
  json top = load(ec_top);
  int edges = 0;
  for (const auto& b : top["binary"]) edges += b.get<int>();
  REQUIRE(edges >= 1);
  REQUIRE(edges < 20);

  const std::string metrics = tmp / "metrics.json";
  REQUIRE(run("eval --pred " + ec + " --truth " + data + "/truth.csv --out " +
              metrics) == 0);
  json m = load(metrics);
  REQUIRE(m["tp"].is_number());
  const double acc = m["accuracy"].get<double>();
  const double shd = m["shd"].get<double>();
  REQUIRE(acc == 1.0 - shd / 25.0);

  // a perfect prediction scores 1.0 everywhere
  json perfect;
  {
    std::ifstream is(data + "/truth.csv");
    std::vector<int> bits;
    std::string line;
    while (std::getline(is, line)) {
      for (char c : line) {
        if (c == '0') bits.push_back(0);
        if (c == '1') bits.push_back(1);
      }
    }
    perfect["binary"] = bits;
    perfect["theta"] = 0.5;
    perfect["eta"] = 0.5;
  }
  const std::string ppath = tmp / "perfect.json";
  {
    std::ofstream os(ppath);
    os << perfect.dump();
  }
  const std::string pmetrics = tmp / "perfect_metrics.json";
  REQUIRE(run("eval --pred " + ppath + " --truth " + data +
              "/truth.csv --out " + pmetrics) == 0);
  json pm = load(pmetrics);
  REQUIRE(pm["f1"] == 1.0);
  REQUIRE(pm["shd"] == 0);

  // an empty prediction misses all 6 edges
  json empty;
  empty["binary"] = std::vector<int>(25, 0);
  empty["theta"] = 1.0;
  empty["eta"] = 1.0;
  const std::string epath = tmp / "empty.json";
  {
    std::ofstream os(epath);
    os << empty.dump();
  }
  const std::string emetrics = tmp / "empty_metrics.json";
  REQUIRE(run("eval --pred " + epath + " --truth " + data +
              "/truth.csv --out " + emetrics) == 0);
  json em = load(emetrics);
  REQUIRE(em["recall"] == 0.0);
  REQUIRE(em["shd"] == 6);
}

TEST_CASE("cli exit codes") {
  TempDir tmp("fsta_cli_codes");
  REQUIRE(run("train --data " + (tmp / "missing") + " --out " +
              (tmp / "x.fsta") + " --epochs 1") == 3);
  REQUIRE(run("estimate --checkpoint " + (tmp / "missing.fsta") + " --data " +
              (tmp / "missing") + " --out " + (tmp / "y.json")) == 3);
  REQUIRE(run("--help") == 0);
  REQUIRE(run("") == 2);

  // shape-incompatible checkpoint is a data error naming the mismatch
  const std::string d16 = tmp / "d16", d32 = tmp / "d32";
  REQUIRE(run("gen --out " + d16 +
              " --subjects 2 --points 16 --burn-in 8 --seed 1") == 0);
  REQUIRE(run("gen --out " + d32 +
              " --subjects 2 --points 32 --burn-in 8 --seed 1") == 0);
  const std::string ck = tmp / "m.fsta";
  REQUIRE(run("train --data " + d16 + " --out " + ck +
              " --epochs 1 --batch 2 --embed 8") == 0);
  REQUIRE(run("estimate --checkpoint " + ck + " --data " + d32 + " --out " +
              (tmp / "z.json")) == 3);
}

TEST_CASE("bench aggregates, reproduces, and compares") {
  TempDir tmp("fsta_cli_bench");
  const std::string data = tmp / "data";
  REQUIRE(run("gen --out " + data +
              " --topology sim1 --subjects 4 --points 32 --burn-in 16 "
              "--seed 2") == 0);

  const std::string b1 = tmp / "bench1.json", b2 = tmp / "bench2.json";
  REQUIRE(run("bench --data " + data + " --out " + b1 +
              " --runs 1 --epochs 2 --batch 4 --embed 8") == 0);
  json r1 = load(b1);
  REQUIRE(r1["aggregate"]["f1"]["std"] == 0.0);
  REQUIRE(r1["aggregate"]["shd"]["std"] == 0.0);
  REQUIRE(r1["per_run"].size() == 1);

  REQUIRE(run("bench --data " + data + " --out " + b2 +
              " --runs 1 --epochs 2 --batch 4 --embed 8") == 0);
  REQUIRE(read_bytes(b1) == read_bytes(b2));

  // three runs, eta grid, then a compare against a shifted copy
  const std::string b3 = tmp / "bench3.json";
  REQUIRE(run("bench --data " + data + " --out " + b3 +
              " --runs 3 --epochs 2 --batch 4 --embed 8 "
              "--eta-grid 0.3,0.7") == 0);
  json r3 = load(b3);
  REQUIRE(r3["per_run"].size() == 3);
  REQUIRE(r3["eta_grid"].size() == 2);

  json shifted = r3;
  for (auto& pr : shifted["per_run"]) {
    pr["metrics"]["f1"] = pr["metrics"]["f1"].get<double>() * 0.5 + 0.01;
    pr["metrics"]["precision"] =
        pr["metrics"]["precision"].get<double>() * 0.5 + 0.02;
  }
  const std::string shifted_path = tmp / "shifted.json";
  {
    std::ofstream os(shifted_path);
    os << shifted.dump();
  }
  const std::string b4 = tmp / "bench4.json";
  REQUIRE(run("bench --data " + data + " --out " + b4 +
              " --runs 3 --epochs 2 --batch 4 --embed 8 --compare " +
              shifted_path) == 0);
  json r4 = load(b4);
  for (const char* key : {"precision", "recall", "f1", "accuracy", "shd"}) {
    const json& p = r4["compare_p_values"][key];
    if (!p.is_null()) {
      REQUIRE(p.get<double>() > 0.0);
      REQUIRE(p.get<double>() <= 1.0);
    }
  }
}
