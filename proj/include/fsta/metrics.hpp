#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsta/data.hpp"
#include "fsta/tensor.hpp"

namespace fsta {

/// Predicted directed graph after thresholding; zero diagonal by
/// construction.
struct BinaryGraph {
  std::size_t n_nodes = 0;
  Tensor adjacency;  // [N,N] of {0,1}
};

/// Confusion counts and derived scores for one binarized graph against the
/// ground truth, over all N^2 ordered pairs (diagonal included as structural
/// true negatives). accuracy == 1 - shd/N^2 holds exactly.
struct MetricsReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0, accuracy = 0.0;
  std::size_t shd = 0;
  double theta = 0.0;  // threshold used to binarize
  double eta = 0.0;    // threshold knob used to derive theta

  nlohmann::json to_json() const {
    return {{"tp", tp},
            {"fp", fp},
            {"tn", tn},
            {"fn", fn},
            {"precision", precision},
            {"recall", recall},
            {"f1", f1},
            {"accuracy", accuracy},
            {"shd", shd},
            {"theta", theta},
            {"eta", eta}};
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.tp = j.at("tp").get<std::size_t>();
    r.fp = j.at("fp").get<std::size_t>();
    r.tn = j.at("tn").get<std::size_t>();
    r.fn = j.at("fn").get<std::size_t>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.shd = j.at("shd").get<std::size_t>();
    r.theta = j.at("theta").get<double>();
    r.eta = j.at("eta").get<double>();
    return r;
  }
};

/// theta = min|A| + eta * (max|A| - min|A|) over off-diagonal entries.
inline double adaptive_threshold(const Tensor& a, double eta) {
  if (a.rank() != 2 || a.extent(0) != a.extent(1)) {
    throw ShapeError("adaptive_threshold expects a square matrix, got " +
                     shape_str(a.shape()));
  }
  const std::size_t n = a.extent(0);
  if (n < 2) throw ValueError("adaptive_threshold needs at least 2 nodes");
  if (eta < 0.0 || eta > 1.0) throw ValueError("eta must be in [0, 1]");
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double v = std::abs(a.at({i, j}));
      if (first) {
        lo = hi = v;
        first = false;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  return lo + eta * (hi - lo);
}

/// Off-diagonal entry -> 1 iff |A_ij| >= theta; diagonal forced to 0.
inline BinaryGraph binarize(const Tensor& a, double theta) {
  if (a.rank() != 2 || a.extent(0) != a.extent(1)) {
    throw ShapeError("binarize expects a square matrix, got " +
                     shape_str(a.shape()));
  }
  if (!std::isfinite(theta)) throw ValueError("theta must be finite");
  const std::size_t n = a.extent(0);
  BinaryGraph g;
  g.n_nodes = n;
  g.adjacency = Tensor({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && std::abs(a.at({i, j})) >= theta) {
        g.adjacency.at({i, j}) = 1.0;
      }
    }
  }
  return g;
}

/// Counts over all N^2 ordered pairs; ratios with zero denominators are
/// reported as 0 so aggregation stays well defined.
inline MetricsReport compute_metrics(const BinaryGraph& pred,
                                     const GroundTruthGraph& truth) {
  if (pred.n_nodes != truth.n_nodes) {
    throw ShapeError("compute_metrics: prediction has " +
                     std::to_string(pred.n_nodes) + " nodes, truth has " +
                     std::to_string(truth.n_nodes));
  }
  const std::size_t n = pred.n_nodes;
  MetricsReport r;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool p = pred.adjacency.at({i, j}) != 0.0;
      const bool t = truth.adjacency.at({i, j}) != 0.0;
      if (p && t) ++r.tp;
      else if (p && !t) ++r.fp;
      else if (!p && t) ++r.fn;
      else ++r.tn;
    }
  }
  const std::size_t cells = n * n;
  r.precision = (r.tp + r.fp) ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
  r.recall = (r.tp + r.fn) ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(cells);
  r.shd = r.fp + r.fn;
  return r;
}

// ---------------------------------------------------------------------------
// Welch's t-test
// ---------------------------------------------------------------------------

namespace detail {

/// Continued fraction for the regularized incomplete beta (Lentz method).
inline double beta_cont_fraction(double a, double b, double x) {
  const double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return h;
}

inline double reg_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cont_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_cont_fraction(b, a, 1.0 - x) / b;
}

inline double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace detail

/// Two-sided Welch's t-test with Welch-Satterthwaite degrees of freedom;
/// p computed through the regularized incomplete beta.
inline double welch_t_test(const std::vector<double>& sample_a,
                           const std::vector<double>& sample_b) {
  if (sample_a.size() < 2 || sample_b.size() < 2) {
    throw ValueError("welch_t_test: each sample needs at least 2 values");
  }
  const double ma = detail::sample_mean(sample_a);
  const double mb = detail::sample_mean(sample_b);
  const double va = detail::sample_variance(sample_a, ma);
  const double vb = detail::sample_variance(sample_b, mb);
  if (va == 0.0 && vb == 0.0) {
    throw ValueError("welch_t_test: both samples have zero variance");
  }
  const double na = static_cast<double>(sample_a.size());
  const double nb = static_cast<double>(sample_b.size());
  const double se2 = va / na + vb / nb;
  const double t = (ma - mb) / std::sqrt(se2);
  const double dof = se2 * se2 /
                     (va * va / (na * na * (na - 1.0)) +
                      vb * vb / (nb * nb * (nb - 1.0)));
  if (t == 0.0) return 1.0;
  // P(|T| > |t|) = I_{dof/(dof+t^2)}(dof/2, 1/2)
  return detail::reg_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

// ---------------------------------------------------------------------------
// Multi-run aggregation
// ---------------------------------------------------------------------------

struct MetricAggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, n-1 denominator
};

struct RunAggregate {
  MetricAggregate precision, recall, f1, accuracy, shd;
  std::size_t n_runs = 0;

  nlohmann::json to_json() const {
    auto one = [](const MetricAggregate& m) {
      return nlohmann::json{{"mean", m.mean}, {"std", m.stddev}};
    };
    return {{"n_runs", n_runs},       {"precision", one(precision)},
            {"recall", one(recall)},  {"f1", one(f1)},
            {"accuracy", one(accuracy)}, {"shd", one(shd)}};
  }
};

inline MetricAggregate aggregate_values(const std::vector<double>& values) {
  MetricAggregate out;
  const std::size_t n = values.size();
  if (n == 0) return out;
  out.mean = detail::sample_mean(values);
  out.stddev = n > 1 ? std::sqrt(detail::sample_variance(values, out.mean))
                     : 0.0;
  return out;
}

inline RunAggregate aggregate_runs(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ValueError("aggregate_runs: no reports");
  auto collect = [&reports](auto getter) {
    std::vector<double> values;
    values.reserve(reports.size());
    for (const MetricsReport& r : reports) values.push_back(getter(r));
    return aggregate_values(values);
  };
  RunAggregate agg;
  agg.n_runs = reports.size();
  agg.precision = collect([](const MetricsReport& r) { return r.precision; });
  agg.recall = collect([](const MetricsReport& r) { return r.recall; });
  agg.f1 = collect([](const MetricsReport& r) { return r.f1; });
  agg.accuracy = collect([](const MetricsReport& r) { return r.accuracy; });
  agg.shd = collect(
      [](const MetricsReport& r) { return static_cast<double>(r.shd); });
  return agg;
}

}  // namespace fsta
