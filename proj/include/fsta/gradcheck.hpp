#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "fsta/autodiff.hpp"
#include "fsta/params.hpp"

namespace fsta {

/// Builds a scalar loss on the tape from the given parameters. Must be
/// deterministic (dropout in eval mode) for finite differences to be valid.
using LossBuilder = std::function<Val(Tape&, const ParameterStore&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

namespace detail {
inline double eval_loss(const LossBuilder& f, const ParameterStore& params) {
  Tape tape;
  Val loss = f(tape, params);
  return tape.value(loss).item();
}
}  // namespace detail

/// Central-difference check of the tape gradients: for every parameter
/// element compares d(loss)/dp against (f(p+h) - f(p-h)) / 2h with relative
/// error measured against max(|analytic|, |numeric|, 1e-8). Inputs must be
/// kept away from ReLU kinks by the caller.
inline GradCheckReport grad_check(const LossBuilder& f, ParameterStore params,
                                  double step_h) {
  if (step_h <= 0.0) throw ValueError("grad_check: step must be > 0");
  Tape tape;
  Val loss = f(tape, params);
  GradMap grads = tape.backward(loss);

  GradCheckReport report;
  for (const std::string& name : params.names()) {
    Tensor& p = params.get(name);
    auto git = grads.find(name);
    // a store parameter the builder never registers cannot affect the loss
    const Tensor g = git != grads.end() ? git->second
                                        : Tensor::zeros(p.shape());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double orig = p[i];
      p[i] = orig + step_h;
      const double f_plus = detail::eval_loss(f, params);
      p[i] = orig - step_h;
      const double f_minus = detail::eval_loss(f, params);
      p[i] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * step_h);
      const double denom =
          std::max({std::abs(g[i]), std::abs(numeric), 1e-8});
      const double rel = std::abs(g[i] - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = i;
        report.analytic = g[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace fsta
