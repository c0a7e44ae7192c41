#pragma once

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsta/model.hpp"
#include "fsta/params.hpp"

namespace fsta {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.90;
  double beta2 = 0.98;
  double eps = 1e-8;
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;

  void validate() const {
    if (learning_rate <= 0.0) throw ValueError("learning_rate must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw ValueError("beta1/beta2 must be in [0, 1)");
    }
    if (epochs < 1) throw ValueError("epochs must be >= 1");
    if (batch_size < 1) throw ValueError("batch_size must be >= 1");
  }
};

/// Per-parameter Adam moments, laid out in parameter-store order.
struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::size_t step = 0;

  static OptimizerState for_params(const ParameterStore& params) {
    OptimizerState st;
    for (std::size_t i = 0; i < params.size(); ++i) {
      st.first_moment.emplace_back(params.value_at(i).shape());
      st.second_moment.emplace_back(params.value_at(i).shape());
    }
    return st;
  }
};

struct TrainReport {
  std::vector<double> epoch_losses;  // mean per-subject loss per epoch
  double final_loss = 0.0;
  double seconds = 0.0;
  nlohmann::json config;

  nlohmann::json to_json() const {
    return {{"epoch_losses", epoch_losses},
            {"final_loss", final_loss},
            {"seconds", seconds},
            {"config", config}};
  }
};

/// One Adam update with bias correction. When `pin_n_points` is nonzero the
/// spectral filter's imaginary bins 0 and T/2 are re-zeroed afterwards so the
/// inverse transform stays exactly real.
inline void adam_step(ParameterStore& params, const GradMap& grads,
                      OptimizerState& state, const OptimizerConfig& cfg,
                      std::size_t pin_n_points = 0) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name_at(i);
    auto it = grads.find(name);
    if (it == grads.end()) {
      throw ValueError("adam_step: missing gradient for parameter " + name);
    }
    const Tensor& g = it->second;
    Tensor& p = params.value_at(i);
    if (!g.same_shape(p)) {
      throw ShapeError("adam_step: gradient shape " + shape_str(g.shape()) +
                       " does not match parameter " + name);
    }
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
  if (pin_n_points != 0) pin_filter_bins(params, pin_n_points);
}

namespace detail {
inline void accumulate_grads(GradMap& acc, const GradMap& g, double weight) {
  for (const auto& [name, tensor] : g) {
    auto it = acc.find(name);
    if (it == acc.end()) {
      Tensor scaled = tensor;
      for (std::size_t i = 0; i < scaled.numel(); ++i) scaled[i] *= weight;
      acc.emplace(name, std::move(scaled));
    } else {
      Tensor& dst = it->second;
      for (std::size_t i = 0; i < dst.numel(); ++i) {
        dst[i] += weight * tensor[i];
      }
    }
  }
}
}  // namespace detail

/// Mini-batch training over subjects: shuffle each epoch with the seeded
/// stream, batch loss = mean of per-subject losses, one Adam step per batch
/// (the last partial batch is kept). Deterministic in (seed, data, config).
inline std::pair<ParameterStore, TrainReport> train(
    const TimeSeriesDataset& ds, const ModelConfig& model_cfg,
    const OptimizerConfig& opt_cfg) {
  model_cfg.validate();
  opt_cfg.validate();
  if (ds.subjects.empty()) throw ValueError("train: empty dataset");
  for (std::size_t s = 0; s < ds.subjects.size(); ++s) {
    const Tensor& x = ds.subjects[s];
    if (x.extent(0) != model_cfg.n_nodes ||
        x.extent(1) != model_cfg.n_points) {
      throw ShapeError("train: subject " + std::to_string(s) + " shape " +
                       shape_str(x.shape()) + " does not match config");
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(opt_cfg.seed);
  ParameterStore params = init_params(model_cfg, rng);
  OptimizerState state = OptimizerState::for_params(params);

  TrainReport report;
  report.config = {{"model", model_cfg.to_json()},
                   {"optimizer",
                    {{"learning_rate", opt_cfg.learning_rate},
                     {"beta1", opt_cfg.beta1},
                     {"beta2", opt_cfg.beta2},
                     {"eps", opt_cfg.eps},
                     {"epochs", opt_cfg.epochs},
                     {"batch_size", opt_cfg.batch_size},
                     {"seed", opt_cfg.seed}}}};

  std::vector<std::size_t> order(ds.subjects.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < opt_cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += opt_cfg.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + opt_cfg.batch_size);
      const double weight = 1.0 / static_cast<double>(end - start);
      GradMap batch_grads;
      for (std::size_t k = start; k < end; ++k) {
        Tape tape;
        ForwardResult fr = forward(tape, ds.subjects[order[k]], params,
                                   model_cfg, Mode::kTrain, rng);
        const double loss = tape.value(fr.loss).item();
        if (!std::isfinite(loss)) {
          throw NumericError("non-finite loss at epoch " +
                             std::to_string(epoch + 1) + ", batch " +
                             std::to_string(start / opt_cfg.batch_size + 1) +
                             ", subject " + std::to_string(order[k]));
        }
        epoch_loss_sum += loss;
        detail::accumulate_grads(batch_grads, tape.backward(fr.loss), weight);
      }
      adam_step(params, batch_grads, state, opt_cfg, model_cfg.n_points);
    }
    report.epoch_losses.push_back(epoch_loss_sum /
                                  static_cast<double>(order.size()));
  }
  report.final_loss = report.epoch_losses.back();
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return {std::move(params), std::move(report)};
}

/// Group-level estimate from a checkpointed parameter store; rejects
/// name/shape mismatches against the config before running.
inline Tensor evaluate_ec(const TimeSeriesDataset& ds,
                          const ParameterStore& params,
                          const ModelConfig& cfg) {
  validate_params(params, cfg);
  return extract_ec(ds, params, cfg);
}

}  // namespace fsta
