#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fsta/numerics.hpp"
#include "fsta/spectral.hpp"
#include "fsta/tensor.hpp"

namespace fsta {

/// Handle to a node on a Tape.
struct Val {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Gradient of the loss with respect to every named parameter, keyed by
/// parameter name. std::map keeps iteration order deterministic.
using GradMap = std::map<std::string, Tensor>;

namespace detail {
inline Tensor permute01(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose01 requires rank >= 2");
  const std::size_t a = x.extent(0);
  const std::size_t b = x.extent(1);
  const std::size_t inner = x.numel() / (a * b);
  Shape out_shape = x.shape();
  std::swap(out_shape[0], out_shape[1]);
  Tensor out = Tensor::uninit(out_shape);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double* src = x.data() + (i * b + j) * inner;
      double* dst = out.data() + (j * a + i) * inner;
      for (std::size_t r = 0; r < inner; ++r) dst[r] = src[r];
    }
  }
  return out;
}
}  // namespace detail

/// Record of primitive operations in execution (hence topological) order.
/// Every op appends one node holding the forward value and a closure that
/// pushes the node's gradient to its parents; replaying the closures in
/// reverse yields gradients for every parameter reachable from the loss.
/// A Tape is confined to a single forward/backward pass.
class Tape {
 public:
  // ---- leaves ----

  /// Non-learnable input; no gradient is accumulated for it.
  Val constant(Tensor v) { return push(std::move(v), {}, nullptr, false); }

  /// Learnable leaf registered under a unique name.
  Val param(const std::string& name, const Tensor& v) {
    if (param_ids_.count(name)) {
      throw ValueError("duplicate parameter on tape: " + name);
    }
    Val id = push(v, {}, nullptr, true);
    nodes_[id.id].name = name;
    param_ids_.emplace(name, id.id);
    return id;
  }

  const Tensor& value(Val v) const { return nodes_.at(v.id).value; }
  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise ----

  Val add(Val a, Val b) {
    Tensor out = fsta::add(value(a), value(b));
    return push(std::move(out), {a.id, b.id},
                [a, b](Tape& t, int self) {
                  const Tensor& g = t.grad(self);
                  t.accumulate(a.id, g);
                  t.accumulate(b.id, g);
                },
                needs(a) || needs(b));
  }

  Val sub(Val a, Val b) {
    Tensor out = fsta::sub(value(a), value(b));
    return push(std::move(out), {a.id, b.id},
                [a, b](Tape& t, int self) {
                  const Tensor& g = t.grad(self);
                  t.accumulate(a.id, g);
                  if (t.needs(b)) {
                    Tensor& gb = t.grad_buffer(b.id);
                    for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
                  }
                },
                needs(a) || needs(b));
  }

  Val scale(Val a, double c) {
    Tensor out = fsta::scale(value(a), c);
    return push(std::move(out), {a.id},
                [a, c](Tape& t, int self) {
                  if (!t.needs(a)) return;
                  const Tensor& g = t.grad(self);
                  Tensor& ga = t.grad_buffer(a.id);
                  for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
                },
                needs(a));
  }

  Val relu(Val a) {
    Tensor out = fsta::relu(value(a));
    return push(std::move(out), {a.id},
                [a](Tape& t, int self) {
                  if (!t.needs(a)) return;
                  const Tensor& g = t.grad(self);
                  const Tensor& x = t.value(a);
                  Tensor& ga = t.grad_buffer(a.id);
                  // gradient at exactly 0 is 0
                  for (std::size_t i = 0; i < g.numel(); ++i) {
                    if (x[i] > 0.0) ga[i] += g[i];
                  }
                },
                needs(a));
  }

  // ---- linear maps ----

  /// x[..,k] * w[k,n] + bias[n]; the 1x1-convolution / per-position affine.
  Val affine_last(Val x, Val w, Val b) {
    Tensor out = fsta::channel_mix(value(x), value(w), value(b));
    return push(std::move(out), {x.id, w.id, b.id},
                [x, w, b](Tape& t, int self) {
                  t.backward_affine(self, x, w, b);
                },
                needs(x) || needs(w) || needs(b));
  }

  /// x[..,k] * w[k,n] with no bias.
  Val matmul_last(Val x, Val w) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const std::size_t k = xv.extent(xv.rank() - 1);
    if (wv.rank() != 2 || wv.extent(0) != k) {
      throw ShapeError("matmul_last: " + shape_str(xv.shape()) + " x " +
                       shape_str(wv.shape()));
    }
    const std::size_t rows = xv.numel() / k;
    const std::size_t n = wv.extent(1);
    Shape out_shape = xv.shape();
    out_shape.back() = n;
    Tensor out = Tensor::uninit(out_shape);
    detail::gemm(false, false, rows, n, k, xv.data(), wv.data(), out.data(),
                 false);
    return push(std::move(out), {x.id, w.id},
                [x, w](Tape& t, int self) {
                  t.backward_affine(self, x, w, Val{});
                },
                needs(x) || needs(w));
  }

  /// Batched product scaled by alpha: a[B,m,k] x b[B,k,n] (or b[B,n,k] when
  /// trans_b). Rank-2 operands are treated as a single batch.
  Val matmul(Val a, Val b, bool trans_b = false, double alpha = 1.0) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != bv.rank() || (av.rank() != 2 && av.rank() != 3)) {
      throw ShapeError("tape matmul supports equal-rank 2 or 3 operands, got " +
                       shape_str(av.shape()) + " and " + shape_str(bv.shape()));
    }
    const std::size_t batch = av.rank() == 3 ? av.extent(0) : 1;
    if (av.rank() == 3 && bv.extent(0) != batch) {
      throw ShapeError("tape matmul: batch mismatch " + shape_str(av.shape()) +
                       " vs " + shape_str(bv.shape()));
    }
    const std::size_t m = av.extent(av.rank() - 2);
    const std::size_t k = av.extent(av.rank() - 1);
    const std::size_t kb = trans_b ? bv.extent(bv.rank() - 1)
                                   : bv.extent(bv.rank() - 2);
    const std::size_t n = trans_b ? bv.extent(bv.rank() - 2)
                                  : bv.extent(bv.rank() - 1);
    if (k != kb) {
      throw ShapeError("tape matmul: inner extent mismatch " +
                       shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    }
    Shape out_shape = av.shape();
    out_shape[out_shape.size() - 1] = n;
    Tensor out = Tensor::uninit(out_shape);
    for (std::size_t i = 0; i < batch; ++i) {
      detail::gemm(false, trans_b, m, n, k, av.data() + i * m * k,
                   bv.data() + i * (trans_b ? n * k : k * n),
                   out.data() + i * m * n, false, alpha);
    }
    return push(std::move(out), {a.id, b.id},
                [a, b, trans_b, alpha, batch, m, n, k](Tape& t, int self) {
                  const Tensor& g = t.grad(self);
                  const Tensor& av2 = t.value(a);
                  const Tensor& bv2 = t.value(b);
                  if (t.needs(a)) {
                    bool first = false;
                    Tensor& ga = t.grad_buffer_for_overwrite(a.id, first);
                    for (std::size_t i = 0; i < batch; ++i) {
                      // dA = alpha * g * B^T (or g * B when B was transposed)
                      detail::gemm(false, !trans_b, m, k, n,
                                   g.data() + i * m * n,
                                   bv2.data() + i * (trans_b ? n * k : k * n),
                                   ga.data() + i * m * k, !first, alpha);
                    }
                  }
                  if (t.needs(b)) {
                    bool first = false;
                    Tensor& gb = t.grad_buffer_for_overwrite(b.id, first);
                    for (std::size_t i = 0; i < batch; ++i) {
                      if (!trans_b) {
                        // dB = alpha * A^T * g
                        detail::gemm(true, false, k, n, m,
                                     av2.data() + i * m * k,
                                     g.data() + i * m * n,
                                     gb.data() + i * k * n, !first, alpha);
                      } else {
                        // C = alpha * A * B^T  =>  dB = alpha * g^T * A
                        detail::gemm(true, false, n, k, m,
                                     g.data() + i * m * n,
                                     av2.data() + i * m * k,
                                     gb.data() + i * n * k, !first, alpha);
                      }
                    }
                  }
                },
                needs(a) || needs(b));
  }

  // ---- nonlinears over the last axis ----

  Val softmax_last(Val x) {
    const Tensor& xv = value(x);
    Tensor out = fsta::softmax(xv, xv.rank() - 1);
    return push(std::move(out), {x.id},
                [x](Tape& t, int self) {
                  if (!t.needs(x)) return;
                  const Tensor& y = t.value(Val{self});
                  const Tensor& g = t.grad(self);
                  bool first = false;
                  Tensor& gx = t.grad_buffer_for_overwrite(x.id, first);
                  const std::size_t d = y.extent(y.rank() - 1);
                  const std::size_t rows = y.numel() / d;
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* yr = y.data() + r * d;
                    const double* gr = g.data() + r * d;
                    double* out_r = gx.data() + r * d;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < d; ++i) dot += yr[i] * gr[i];
                    if (first) {
                      for (std::size_t i = 0; i < d; ++i) {
                        out_r[i] = yr[i] * (gr[i] - dot);
                      }
                    } else {
                      for (std::size_t i = 0; i < d; ++i) {
                        out_r[i] += yr[i] * (gr[i] - dot);
                      }
                    }
                  }
                },
                needs(x));
  }

  Val layer_norm(Val x, Val scale_p, Val shift_p, double eps) {
    const Tensor& xv = value(x);
    const std::size_t d = xv.extent(xv.rank() - 1);
    const std::size_t rows = xv.numel() / d;
    // saved statistics for the backward pass
    auto mean = std::make_shared<std::vector<double>>(rows);
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    const Tensor& gv = value(scale_p);
    const Tensor& bv = value(shift_p);
    if (gv.numel() != d || bv.numel() != d) {
      throw ShapeError("layer_norm: affine length mismatch with last extent " +
                       std::to_string(d));
    }
    if (eps <= 0.0) throw ValueError("layer_norm: eps must be > 0");
    Tensor out = Tensor::uninit(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = xv.data() + r * d;
      double mu = 0.0;
      for (std::size_t i = 0; i < d; ++i) mu += row[i];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double c = row[i] - mu;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const double is = 1.0 / std::sqrt(var + eps);
      (*mean)[r] = mu;
      (*inv_std)[r] = is;
      double* orow = out.data() + r * d;
      for (std::size_t i = 0; i < d; ++i) {
        orow[i] = (row[i] - mu) * is * gv[i] + bv[i];
      }
    }
    return push(
        std::move(out), {x.id, scale_p.id, shift_p.id},
        [x, scale_p, shift_p, mean, inv_std, d, rows](Tape& t, int self) {
          const Tensor& g = t.grad(self);
          const Tensor& xv2 = t.value(x);
          const Tensor& gamma = t.value(scale_p);
          const bool nx = t.needs(x);
          const bool ns = t.needs(scale_p);
          const bool nb = t.needs(shift_p);
          Tensor* gx = nx ? &t.grad_buffer(x.id) : nullptr;
          Tensor* gs = ns ? &t.grad_buffer(scale_p.id) : nullptr;
          Tensor* gb = nb ? &t.grad_buffer(shift_p.id) : nullptr;
          DoubleVec xhat(d), gxh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* xrow = xv2.data() + r * d;
            const double* grow = g.data() + r * d;
            const double mu = (*mean)[r];
            const double is = (*inv_std)[r];
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
              xhat[i] = (xrow[i] - mu) * is;
              gxh[i] = grow[i] * gamma[i];
              m1 += gxh[i];
              m2 += gxh[i] * xhat[i];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            if (nx) {
              double* gxr = gx->data() + r * d;
              for (std::size_t i = 0; i < d; ++i) {
                gxr[i] += is * (gxh[i] - m1 - xhat[i] * m2);
              }
            }
            if (ns) {
              for (std::size_t i = 0; i < d; ++i) {
                (*gs)[i] += grow[i] * xhat[i];
              }
            }
            if (nb) {
              for (std::size_t i = 0; i < d; ++i) (*gb)[i] += grow[i];
            }
          }
        },
        needs(x) || needs(scale_p) || needs(shift_p));
  }

  /// Inverted dropout. Eval mode (or rate 0) adds no node and returns x.
  Val dropout(Val x, double rate, Mode mode, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) {
      throw ValueError("dropout rate must be in [0, 1), got " +
                       std::to_string(rate));
    }
    if (mode == Mode::kEval || rate == 0.0) return x;
    const Tensor& xv = value(x);
    auto mask = std::make_shared<DoubleVec>(dropout_mask(xv.numel(), rate, rng));
    Tensor out = xv;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= (*mask)[i];
    return push(std::move(out), {x.id},
                [x, mask](Tape& t, int self) {
                  if (!t.needs(x)) return;
                  const Tensor& g = t.grad(self);
                  Tensor& gx = t.grad_buffer(x.id);
                  for (std::size_t i = 0; i < g.numel(); ++i) {
                    gx[i] += g[i] * (*mask)[i];
                  }
                },
                needs(x));
  }

  // ---- shape moves ----

  /// Swap the first two axes (rank >= 2).
  Val transpose01(Val x) {
    Tensor out = detail::permute01(value(x));
    return push(std::move(out), {x.id},
                [x](Tape& t, int self) {
                  if (!t.needs(x)) return;
                  Tensor back = detail::permute01(t.grad(self));
                  t.accumulate(x.id, back);
                },
                needs(x));
  }

  Val reshape(Val x, Shape new_shape) {
    Tensor out = value(x).reshaped(std::move(new_shape));
    Shape old_shape = value(x).shape();
    return push(std::move(out), {x.id},
                [x, old_shape](Tape& t, int self) {
                  if (!t.needs(x)) return;
                  Tensor back = t.grad(self).reshaped(old_shape);
                  t.accumulate(x.id, back);
                },
                needs(x));
  }

  /// out = x[..., start : start+len] along the last axis.
  Val slice_last(Val x, std::size_t start, std::size_t len) {
    const Tensor& xv = value(x);
    const std::size_t d = xv.extent(xv.rank() - 1);
    if (start + len > d) {
      throw ShapeError("slice_last: [" + std::to_string(start) + "," +
                       std::to_string(start + len) + ") exceeds extent " +
                       std::to_string(d));
    }
    const std::size_t rows = xv.numel() / d;
    Shape out_shape = xv.shape();
    out_shape.back() = len;
    Tensor out = Tensor::uninit(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = xv.data() + r * d + start;
      double* dst = out.data() + r * len;
      for (std::size_t i = 0; i < len; ++i) dst[i] = src[i];
    }
    return push(std::move(out), {x.id},
                [x, start, len, d, rows](Tape& t, int self) {
                  if (!t.needs(x)) return;
                  const Tensor& g = t.grad(self);
                  Tensor& gx = t.grad_buffer(x.id);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* src = g.data() + r * len;
                    double* dst = gx.data() + r * d + start;
                    for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                  }
                },
                needs(x));
  }

  /// Concatenate along the last axis; all parts share the leading shape.
  Val concat_last(const std::vector<Val>& parts) {
    if (parts.empty()) throw ValueError("concat_last: no parts");
    const Tensor& first = value(parts[0]);
    Shape lead(first.shape().begin(), first.shape().end() - 1);
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    bool any_needs = false;
    for (Val p : parts) {
      const Tensor& pv = value(p);
      Shape pl(pv.shape().begin(), pv.shape().end() - 1);
      if (pl != lead) {
        throw ShapeError("concat_last: leading shape mismatch");
      }
      widths.push_back(pv.extent(pv.rank() - 1));
      total += widths.back();
      any_needs = any_needs || needs(p);
    }
    Shape out_shape = lead;
    out_shape.push_back(total);
    Tensor out = Tensor::uninit(out_shape);
    const std::size_t rows = shape_numel(lead);
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const Tensor& pv = value(parts[pi]);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* src = pv.data() + r * widths[pi];
        double* dst = out.data() + r * total + off;
        for (std::size_t i = 0; i < widths[pi]; ++i) dst[i] = src[i];
      }
      off += widths[pi];
    }
    std::vector<int> parent_ids;
    for (Val p : parts) parent_ids.push_back(p.id);
    auto parts_copy = parts;
    return push(std::move(out), parent_ids,
                [parts_copy, widths, rows, total](Tape& t, int self) {
                  const Tensor& g = t.grad(self);
                  std::size_t off2 = 0;
                  for (std::size_t pi = 0; pi < parts_copy.size(); ++pi) {
                    if (t.needs(parts_copy[pi])) {
                      Tensor& gp = t.grad_buffer(parts_copy[pi].id);
                      for (std::size_t r = 0; r < rows; ++r) {
                        const double* src = g.data() + r * total + off2;
                        double* dst = gp.data() + r * widths[pi];
                        for (std::size_t i = 0; i < widths[pi]; ++i) {
                          dst[i] += src[i];
                        }
                      }
                    }
                    off2 += widths[pi];
                  }
                },
                any_needs);
  }

  // ---- reductions ----

  /// Mean over the first axis: [T, rest...] -> [rest...].
  Val mean_axis0(Val x) {
    const Tensor& xv = value(x);
    if (xv.rank() < 2) throw ShapeError("mean_axis0 requires rank >= 2");
    const std::size_t t_len = xv.extent(0);
    const std::size_t inner = xv.numel() / t_len;
    Shape out_shape(xv.shape().begin() + 1, xv.shape().end());
    Tensor out(out_shape);
    for (std::size_t t = 0; t < t_len; ++t) {
      const double* src = xv.data() + t * inner;
      for (std::size_t i = 0; i < inner; ++i) out[i] += src[i];
    }
    const double inv = 1.0 / static_cast<double>(t_len);
    for (std::size_t i = 0; i < inner; ++i) out[i] *= inv;
    return push(std::move(out), {x.id},
                [x, t_len, inner, inv](Tape& t, int self) {
                  if (!t.needs(x)) return;
                  const Tensor& g = t.grad(self);
                  Tensor& gx = t.grad_buffer(x.id);
                  for (std::size_t ti = 0; ti < t_len; ++ti) {
                    double* dst = gx.data() + ti * inner;
                    for (std::size_t i = 0; i < inner; ++i) {
                      dst[i] += g[i] * inv;
                    }
                  }
                },
                needs(x));
  }

  /// Scalar sum of all elements.
  Val sum(Val x) {
    const Tensor& xv = value(x);
    double s = 0.0;
    for (std::size_t i = 0; i < xv.numel(); ++i) s += xv[i];
    return push(Tensor::scalar(s), {x.id},
                [x](Tape& t, int self) {
                  if (!t.needs(x)) return;
                  const double g0 = t.grad(self)[0];
                  Tensor& gx = t.grad_buffer(x.id);
                  for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g0;
                },
                needs(x));
  }

  /// Scalar sum of squares.
  Val sum_squares(Val x) {
    const Tensor& xv = value(x);
    double s = 0.0;
    for (std::size_t i = 0; i < xv.numel(); ++i) s += xv[i] * xv[i];
    return push(Tensor::scalar(s), {x.id},
                [x](Tape& t, int self) {
                  if (!t.needs(x)) return;
                  const double g0 = t.grad(self)[0];
                  const Tensor& xv2 = t.value(x);
                  Tensor& gx = t.grad_buffer(x.id);
                  for (std::size_t i = 0; i < xv2.numel(); ++i) {
                    gx[i] += 2.0 * xv2[i] * g0;
                  }
                },
                needs(x));
  }

  /// Scalar sum of absolute values; subgradient 0 at 0.
  Val abs_sum(Val x) {
    const Tensor& xv = value(x);
    double s = 0.0;
    for (std::size_t i = 0; i < xv.numel(); ++i) s += std::abs(xv[i]);
    return push(Tensor::scalar(s), {x.id},
                [x](Tape& t, int self) {
                  if (!t.needs(x)) return;
                  const double g0 = t.grad(self)[0];
                  const Tensor& xv2 = t.value(x);
                  Tensor& gx = t.grad_buffer(x.id);
                  for (std::size_t i = 0; i < xv2.numel(); ++i) {
                    if (xv2[i] > 0.0) gx[i] += g0;
                    else if (xv2[i] < 0.0) gx[i] -= g0;
                  }
                },
                needs(x));
  }

  // ---- spectral stage ----

  /// FFT along time -> complex modulation by the (re, im) filter planes ->
  /// real inverse FFT. x is [T,N,D]; the planes are [F,N,D] with
  /// F = floor(T/2)+1. Imaginary filter entries at bin 0 (and T/2 for even T)
  /// do not influence the output, matching the pinned-bin convention.
  Val spectral_filter(Val x, Val filt_re, Val filt_im) {
    const Tensor& xv = value(x);
    detail::check_3d(xv, "spectral_filter");
    const std::size_t t_len = xv.extent(0);
    const std::size_t f_len = half_bins(t_len);
    const std::size_t n_series = xv.extent(1) * xv.extent(2);
    const Tensor& fre = value(filt_re);
    const Tensor& fim = value(filt_im);
    Shape want{f_len, xv.extent(1), xv.extent(2)};
    if (fre.shape() != want || fim.shape() != want) {
      throw ShapeError("spectral_filter: filter planes must be " +
                       shape_str(want) + ", got " + shape_str(fre.shape()));
    }

    // forward: analyze, modulate, synthesize with inverse weights
    auto spec_re = std::make_shared<Tensor>(Tensor::uninit(want));
    auto spec_im = std::make_shared<Tensor>(Tensor::uninit(want));
    detail::analyze(xv.data(), t_len, n_series, spec_re->data(),
                    spec_im->data());
    Tensor mod_re = Tensor::uninit(want), mod_im = Tensor::uninit(want);
    for (std::size_t i = 0; i < mod_re.numel(); ++i) {
      const double a = (*spec_re)[i], b = (*spec_im)[i];
      const double c = fre[i], d = fim[i];
      mod_re[i] = a * c - b * d;
      mod_im[i] = a * d + b * c;
    }
    // the inverse synthesis reads only the real part at the pinned bins, so a
    // not-yet-pinned filter cannot leak an imaginary component
    Tensor out = Tensor::uninit({t_len, xv.extent(1), xv.extent(2)});
    std::vector<double> w = detail::inverse_weights(t_len);
    detail::synthesize(mod_re.data(), mod_im.data(), t_len, n_series, w.data(),
                       out.data());

    return push(
        std::move(out), {x.id, filt_re.id, filt_im.id},
        [x, filt_re, filt_im, spec_re, spec_im, t_len, f_len, n_series](
            Tape& t, int self) {
          const Tensor& g = t.grad(self);
          // adjoint of synthesis: weighted forward analysis of the gradient
          Tensor gm_re = Tensor::uninit({f_len, 1, n_series});
          Tensor gm_im = Tensor::uninit({f_len, 1, n_series});
          detail::analyze(g.data(), t_len, n_series, gm_re.data(),
                          gm_im.data());
          std::vector<double> w2 = detail::inverse_weights(t_len);
          // d/dH~ of sum_t g_t * synth(H~)_t is w_f * analyze(g)_f, both
          // planes; sin(0) = sin(pi t) = 0 keeps the pinned bins at zero.
          for (std::size_t f = 0; f < f_len; ++f) {
            const double wf = w2[f];
            for (std::size_t s = 0; s < n_series; ++s) {
              gm_re[f * n_series + s] *= wf;
              gm_im[f * n_series + s] *= wf;
            }
          }
          const Tensor& fre2 = t.value(filt_re);
          const Tensor& fim2 = t.value(filt_im);
          if (t.needs(filt_re) || t.needs(filt_im)) {
            // dK = conj(H) * G
            if (t.needs(filt_re)) {
              Tensor& gr = t.grad_buffer(filt_re.id);
              for (std::size_t i = 0; i < gr.numel(); ++i) {
                gr[i] += (*spec_re)[i] * gm_re[i] + (*spec_im)[i] * gm_im[i];
              }
            }
            if (t.needs(filt_im)) {
              Tensor& gi = t.grad_buffer(filt_im.id);
              for (std::size_t i = 0; i < gi.numel(); ++i) {
                gi[i] += (*spec_re)[i] * gm_im[i] - (*spec_im)[i] * gm_re[i];
              }
            }
          }
          if (t.needs(x)) {
            // dH = conj(K) * G, then the adjoint of analysis is an
            // unweighted synthesis
            Tensor dh_re = Tensor::uninit({f_len, 1, n_series});
            Tensor dh_im = Tensor::uninit({f_len, 1, n_series});
            for (std::size_t i = 0; i < dh_re.numel(); ++i) {
              dh_re[i] = fre2[i] * gm_re[i] + fim2[i] * gm_im[i];
              dh_im[i] = fre2[i] * gm_im[i] - fim2[i] * gm_re[i];
            }
            std::vector<double> ones_w(f_len, 1.0);
            Tensor gx = Tensor::uninit({t_len, 1, n_series});
            detail::synthesize(dh_re.data(), dh_im.data(), t_len, n_series,
                               ones_w.data(), gx.data());
            Tensor& gxt = t.grad_buffer(x.id);
            for (std::size_t i = 0; i < gx.numel(); ++i) gxt[i] += gx[i];
          }
        },
        needs(x) || needs(filt_re) || needs(filt_im));
  }

  // ---- backward ----

  /// Reverse sweep from a scalar loss; returns the gradient of every named
  /// parameter on the tape (zero tensors for parameters the loss does not
  /// reach). Accumulation order is fixed by record order.
  GradMap backward(Val loss) {
    if (!loss.valid() || static_cast<std::size_t>(loss.id) >= nodes_.size()) {
      throw ValueError("backward: invalid loss node");
    }
    if (nodes_[loss.id].value.numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " +
                       shape_str(nodes_[loss.id].value.shape()));
    }
    grads_.assign(nodes_.size(), Tensor());
    has_grad_.assign(nodes_.size(), 0);
    grad_buffer(loss.id)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      if (has_grad_[i] && nodes_[i].backward) {
        nodes_[i].backward(*this, i);
      }
    }
    GradMap out;
    for (const auto& [name, id] : param_ids_) {
      if (has_grad_[id]) {
        out.emplace(name, grads_[id]);
      } else {
        out.emplace(name, Tensor::zeros(nodes_[id].value.shape()));
      }
    }
    grads_.clear();
    has_grad_.clear();
    return out;
  }

  // ---- helpers used by backward closures ----

  bool needs(Val v) const { return v.valid() && nodes_[v.id].needs_grad; }

  const Tensor& grad(int id) const { return grads_[id]; }

  Tensor& grad_buffer(int id) {
    if (!has_grad_[id]) {
      grads_[id] = Tensor::zeros(nodes_[id].value.shape());
      has_grad_[id] = 1;
    }
    return grads_[id];
  }

  /// Like grad_buffer, but when this is the first contribution the buffer is
  /// returned uninitialized and `first` set so the caller assigns instead of
  /// accumulating; skips the zero fill on large gradients.
  Tensor& grad_buffer_for_overwrite(int id, bool& first) {
    first = !has_grad_[id];
    if (first) {
      grads_[id] = Tensor::uninit(nodes_[id].value.shape());
      has_grad_[id] = 1;
    }
    return grads_[id];
  }

  void accumulate(int id, const Tensor& g) {
    if (!nodes_[id].needs_grad) return;
    Tensor& buf = grad_buffer(id);
    for (std::size_t i = 0; i < g.numel(); ++i) buf[i] += g[i];
  }

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    std::function<void(Tape&, int)> backward;
    std::string name;
    bool needs_grad = false;
  };

  Val push(Tensor value, std::vector<int> parents,
           std::function<void(Tape&, int)> bwd, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(bwd);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Val{static_cast<int>(nodes_.size()) - 1};
  }

  void backward_affine(int self, Val x, Val w, Val b) {
    const Tensor& g = grad(self);
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const std::size_t k = wv.extent(0);
    const std::size_t n = wv.extent(1);
    const std::size_t rows = xv.numel() / k;
    if (needs(x)) {
      // dX = g * W^T
      detail::gemm(false, true, rows, k, n, g.data(), wv.data(),
                   grad_buffer(x.id).data(), true);
    }
    if (needs(w)) {
      // dW = X^T * g
      detail::gemm(true, false, k, n, rows, xv.data(), g.data(),
                   grad_buffer(w.id).data(), true);
    }
    if (b.valid() && needs(b)) {
      Tensor& gb = grad_buffer(b.id);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = g.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) gb[j] += row[j];
      }
    }
  }

  std::vector<Node> nodes_;
  std::map<std::string, int> param_ids_;
  std::vector<Tensor> grads_;
  std::vector<char> has_grad_;
};

}  // namespace fsta
