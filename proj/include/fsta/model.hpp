#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fsta/autodiff.hpp"
#include "fsta/data.hpp"
#include "fsta/params.hpp"
#include "fsta/rng.hpp"

namespace fsta {

struct ModelConfig {
  std::size_t n_nodes = 5;        // N, channels
  std::size_t n_points = 500;     // T, samples per channel
  std::size_t embed_dim = 16;     // D
  std::size_t n_heads = 2;        // H
  std::size_t ffn_dim = 0;        // hidden width of the FFNs; 0 = 4*D
  double dropout_rate = 0.2;
  double pe_base = 10000.0;       // positional-encoding base
  double sparsity_weight = 0.05;  // alpha in the loss
  double layer_norm_eps = 1e-5;

  std::size_t head_dim() const { return embed_dim / n_heads; }
  std::size_t hidden_dim() const {
    return ffn_dim != 0 ? ffn_dim : 4 * embed_dim;
  }
  std::size_t n_bins() const { return half_bins(n_points); }

  void validate() const {
    if (n_nodes < 2) throw ValueError("n_nodes must be >= 2");
    if (n_points < 2) throw ValueError("n_points must be >= 2");
    if (n_heads < 1) throw ValueError("n_heads must be >= 1");
    if (embed_dim % n_heads != 0) {
      throw ValueError("embed_dim must be divisible by n_heads");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw ValueError("dropout_rate must be in [0, 1)");
    }
    if (sparsity_weight < 0.0) throw ValueError("sparsity_weight must be >= 0");
    if (pe_base <= 0.0) throw ValueError("pe_base must be > 0");
    if (layer_norm_eps <= 0.0) throw ValueError("layer_norm_eps must be > 0");
  }

  nlohmann::json to_json() const {
    return {{"n_nodes", n_nodes},
            {"n_points", n_points},
            {"embed_dim", embed_dim},
            {"n_heads", n_heads},
            {"ffn_dim", ffn_dim},
            {"dropout_rate", dropout_rate},
            {"pe_base", pe_base},
            {"sparsity_weight", sparsity_weight},
            {"layer_norm_eps", layer_norm_eps}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.n_nodes = j.at("n_nodes").get<std::size_t>();
    cfg.n_points = j.at("n_points").get<std::size_t>();
    cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.ffn_dim = j.value("ffn_dim", std::size_t{0});
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.pe_base = j.value("pe_base", 10000.0);
    cfg.sparsity_weight = j.at("sparsity_weight").get<double>();
    cfg.layer_norm_eps = j.value("layer_norm_eps", 1e-5);
    cfg.validate();
    return cfg;
  }
};

/// Fixed sinusoidal table [T,D]: entry (p,2k) = sin(p / base^(2k/D)),
/// entry (p,2k+1) = cos(p / base^(2k/D)). Broadcast over the node axis.
inline Tensor positional_encoding(std::size_t t_len, std::size_t dim,
                                  double base) {
  Tensor pe({t_len, dim});
  for (std::size_t p = 0; p < t_len; ++p) {
    for (std::size_t k = 0; 2 * k < dim; ++k) {
      const double freq =
          std::pow(base, -static_cast<double>(2 * k) / static_cast<double>(dim));
      const double angle = static_cast<double>(p) * freq;
      pe.at({p, 2 * k}) = std::sin(angle);
      if (2 * k + 1 < dim) pe.at({p, 2 * k + 1}) = std::cos(angle);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Parameter inventory
// ---------------------------------------------------------------------------

struct ParamSpecEntry {
  std::string name;
  Shape shape;
  enum class Kind { kAffine, kNormScale, kNormShift, kFilterRe, kFilterIm } kind;
  std::size_t fan_in = 0;  // for kAffine
};

/// Canonical ordered list of every learnable array; the single source of
/// truth for initialization, optimizer layout, checkpoints, and validation.
inline std::vector<ParamSpecEntry> parameter_spec(const ModelConfig& cfg) {
  using Kind = ParamSpecEntry::Kind;
  const std::size_t n = cfg.n_nodes, dim = cfg.embed_dim, hd = cfg.head_dim();
  const std::size_t hidden = cfg.hidden_dim(), f_len = cfg.n_bins();
  std::vector<ParamSpecEntry> spec;
  auto affine = [&spec](std::string name, Shape shape, std::size_t fan_in) {
    spec.push_back({std::move(name), std::move(shape), Kind::kAffine, fan_in});
  };
  auto norm = [&spec](const std::string& prefix, std::size_t width) {
    spec.push_back({prefix + ".scale", {width}, Kind::kNormScale, 0});
    spec.push_back({prefix + ".shift", {width}, Kind::kNormShift, 0});
  };
  auto ffn = [&](const std::string& prefix) {
    affine(prefix + ".ffn.w1", {dim, hidden}, dim);
    affine(prefix + ".ffn.b1", {hidden}, dim);
    affine(prefix + ".ffn.w2", {hidden, dim}, hidden);
    affine(prefix + ".ffn.b2", {dim}, hidden);
  };

  affine("embed.kernel", {1, dim}, 1);
  affine("embed.bias", {dim}, 1);

  spec.push_back({"fa.filter.re", {f_len, n, dim}, Kind::kFilterRe, 0});
  spec.push_back({"fa.filter.im", {f_len, n, dim}, Kind::kFilterIm, 0});
  norm("fa.norm1", dim);
  ffn("fa");
  norm("fa.norm2", dim);

  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::string p = "ta.head" + std::to_string(h);
    affine(p + ".wq", {hd, hd}, hd);
    affine(p + ".wk", {hd, hd}, hd);
    affine(p + ".wv", {hd, hd}, hd);
    affine(p + ".bq", {hd}, hd);
    affine(p + ".bk", {hd}, hd);
    affine(p + ".bv", {hd}, hd);
  }
  affine("ta.wc", {dim, dim}, dim);
  norm("ta.norm1", dim);
  ffn("ta");
  norm("ta.norm2", dim);

  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::string p = "sfa.head" + std::to_string(h);
    affine(p + ".wq", {hd, hd}, hd);
    affine(p + ".wk", {hd, hd}, hd);
    affine(p + ".bq", {hd}, hd);
    affine(p + ".bk", {hd}, hd);
  }
  norm("sfa.norm1", dim);
  ffn("sfa");
  norm("sfa.norm2", dim);

  affine("readout.kernel", {dim, 1}, dim);
  affine("readout.bias", {1}, dim);
  return spec;
}

/// Zero the filter's imaginary plane at bin 0 and, for even T, at bin T/2.
inline void pin_filter_bins(ParameterStore& params, std::size_t n_points) {
  if (!params.contains("fa.filter.im")) return;
  Tensor& im = params.get("fa.filter.im");
  const std::size_t f_len = im.extent(0);
  const std::size_t plane = im.numel() / f_len;
  for (std::size_t i = 0; i < plane; ++i) im[i] = 0.0;
  if (n_points % 2 == 0) {
    double* top = im.data() + (f_len - 1) * plane;
    for (std::size_t i = 0; i < plane; ++i) top[i] = 0.0;
  }
}

/// Affine maps start uniform in +-sqrt(1/fan_in) (weights and biases alike),
/// norms at identity, and the spectral filter at pass-through (1 + 0i) with a
/// small Gaussian ripple on the unpinned entries.
inline ParameterStore init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  constexpr double kFilterInitStd = 0.1;
  ParameterStore store;
  for (const ParamSpecEntry& e : parameter_spec(cfg)) {
    Tensor t(e.shape);
    switch (e.kind) {
      case ParamSpecEntry::Kind::kAffine: {
        const double bound = std::sqrt(1.0 / static_cast<double>(e.fan_in));
        fill_uniform(t, -bound, bound, rng);
        break;
      }
      case ParamSpecEntry::Kind::kNormScale:
        t = Tensor::ones(e.shape);
        break;
      case ParamSpecEntry::Kind::kNormShift:
        break;  // zeros
      case ParamSpecEntry::Kind::kFilterRe:
        fill_normal(t, 1.0, kFilterInitStd, rng);
        break;
      case ParamSpecEntry::Kind::kFilterIm:
        fill_normal(t, 0.0, kFilterInitStd, rng);
        break;
    }
    store.insert(e.name, std::move(t));
  }
  pin_filter_bins(store, cfg.n_points);
  return store;
}

/// Checks a loaded store against the config's inventory; throws naming the
/// first offending parameter.
inline void validate_params(const ParameterStore& params,
                            const ModelConfig& cfg) {
  const auto spec = parameter_spec(cfg);
  if (params.size() != spec.size()) {
    throw ShapeError("parameter count " + std::to_string(params.size()) +
                     " does not match config (want " +
                     std::to_string(spec.size()) + ")");
  }
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (params.name_at(i) != spec[i].name) {
      throw ShapeError("unexpected parameter '" + params.name_at(i) +
                       "' (want '" + spec[i].name + "')");
    }
    if (params.value_at(i).shape() != spec[i].shape) {
      throw ShapeError("parameter '" + spec[i].name + "' has shape " +
                       shape_str(params.value_at(i).shape()) + ", want " +
                       shape_str(spec[i].shape));
    }
  }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct ForwardResult {
  Val x_hat;              // [N,T] reconstruction
  Val ec;                 // [N,N] row-stochastic connectivity estimate
  std::vector<Val> maps;  // per-head attention stacks, each [T,N,N]
  Val loss;               // scalar
};

namespace detail {

struct BoundParams {
  std::map<std::string, Val> vals;
  Val operator()(const std::string& name) const {
    auto it = vals.find(name);
    if (it == vals.end()) throw ValueError("unbound parameter: " + name);
    return it->second;
  }
};

inline BoundParams bind_params(Tape& tape, const ParameterStore& params) {
  BoundParams bound;
  for (const std::string& name : params.names()) {
    bound.vals.emplace(name, tape.param(name, params.get(name)));
  }
  return bound;
}

/// Binds parameters as non-learnable constants (no gradients accumulate),
/// for passes that differentiate with respect to something else.
inline BoundParams bind_constants(Tape& tape, const ParameterStore& params) {
  BoundParams bound;
  for (const std::string& name : params.names()) {
    bound.vals.emplace(name, tape.constant(params.get(name)));
  }
  return bound;
}

/// Residual + norm + feedforward common to all three blocks:
/// a = norm1(mixed + block_in); out = norm2(ReLU(a W1 + b1) W2 + b2 + a),
/// with dropout between the two affines in train mode.
inline Val ffn_block(Tape& tape, const BoundParams& p, const std::string& pre,
                     Val mixed, Val block_in, const ModelConfig& cfg, Mode mode,
                     Rng& rng) {
  Val a = tape.layer_norm(tape.add(mixed, block_in), p(pre + ".norm1.scale"),
                          p(pre + ".norm1.shift"), cfg.layer_norm_eps);
  Val h = tape.relu(
      tape.affine_last(a, p(pre + ".ffn.w1"), p(pre + ".ffn.b1")));
  h = tape.dropout(h, cfg.dropout_rate, mode, rng);
  h = tape.affine_last(h, p(pre + ".ffn.w2"), p(pre + ".ffn.b2"));
  return tape.layer_norm(tape.add(h, a), p(pre + ".norm2.scale"),
                         p(pre + ".norm2.shift"), cfg.layer_norm_eps);
}

}  // namespace detail

/// Embedding + positional encoding: [N,T] -> [T,N,D], then dropout.
inline Val embed_and_encode(Tape& tape, Val x, const detail::BoundParams& p,
                            const ModelConfig& cfg, Mode mode, Rng& rng) {
  Val xt = tape.reshape(tape.transpose01(x), {cfg.n_points, cfg.n_nodes, 1});
  Val emb = tape.affine_last(xt, p("embed.kernel"), p("embed.bias"));
  Tensor pe = positional_encoding(cfg.n_points, cfg.embed_dim, cfg.pe_base);
  Tensor pe3({cfg.n_points, cfg.n_nodes, cfg.embed_dim});
  for (std::size_t t = 0; t < cfg.n_points; ++t) {
    for (std::size_t n = 0; n < cfg.n_nodes; ++n) {
      for (std::size_t d = 0; d < cfg.embed_dim; ++d) {
        pe3.at({t, n, d}) = pe.at({t, d});
      }
    }
  }
  Val with_pe = tape.add(emb, tape.constant(std::move(pe3)));
  return tape.dropout(with_pe, cfg.dropout_rate, mode, rng);
}

/// Frequency-domain stage: FFT -> learnable filter -> IFFT, then the
/// residual/norm/FFN block. [T,N,D] -> [T,N,D].
inline Val fourier_attention(Tape& tape, Val xs, const detail::BoundParams& p,
                             const ModelConfig& cfg, Mode mode, Rng& rng) {
  Val filtered =
      tape.spectral_filter(xs, p("fa.filter.re"), p("fa.filter.im"));
  return detail::ffn_block(tape, p, "fa", filtered, xs, cfg, mode, rng);
}

/// Multi-head self-attention over the time axis, per node: [T,N,D] -> [N,T,D].
inline Val temporal_attention(Tape& tape, Val xp, const detail::BoundParams& p,
                              const ModelConfig& cfg, Mode mode, Rng& rng) {
  const std::size_t hd = cfg.head_dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(hd));
  Val xt = tape.transpose01(xp);  // [N,T,D]
  std::vector<Val> heads;
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::string pre = "ta.head" + std::to_string(h);
    Val xh = tape.slice_last(xt, h * hd, hd);
    Val q = tape.affine_last(xh, p(pre + ".wq"), p(pre + ".bq"));
    Val k = tape.affine_last(xh, p(pre + ".wk"), p(pre + ".bk"));
    Val v = tape.affine_last(xh, p(pre + ".wv"), p(pre + ".bv"));
    Val attn = tape.softmax_last(
        tape.matmul(q, k, /*trans_b=*/true, inv_sqrt_d));
    heads.push_back(tape.matmul(attn, v));  // [N,T,hd]
  }
  Val mixed = tape.matmul_last(tape.concat_last(heads), p("ta.wc"));
  return detail::ffn_block(tape, p, "ta", mixed, xt, cfg, mode, rng);
}

struct FusionResult {
  Val recon3d;            // [N,T,D]
  Val ec;                 // [N,N]
  std::vector<Val> maps;  // per head [T,N,N]
};

/// Node-axis attention at every time step. The per-head, per-step maps are
/// averaged over steps and heads and row-softmaxed into the connectivity
/// estimate, which then reweights the temporal features.
inline FusionResult fusion_attention(Tape& tape, Val xp, Val z_t,
                                     const detail::BoundParams& p,
                                     const ModelConfig& cfg, Mode mode,
                                     Rng& rng) {
  const std::size_t hd = cfg.head_dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(hd));
  FusionResult out;
  Val acc;
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::string pre = "sfa.head" + std::to_string(h);
    Val xh = tape.slice_last(xp, h * hd, hd);  // [T,N,hd]
    Val q = tape.affine_last(xh, p(pre + ".wq"), p(pre + ".bq"));
    Val k = tape.affine_last(xh, p(pre + ".wk"), p(pre + ".bk"));
    Val e = tape.softmax_last(
        tape.matmul(q, k, /*trans_b=*/true, inv_sqrt_d));
    out.maps.push_back(e);  // [T,N,N], rows over source nodes
    acc = h == 0 ? e : tape.add(acc, e);
  }
  Val mean_map = tape.mean_axis0(
      tape.scale(acc, 1.0 / static_cast<double>(cfg.n_heads)));  // [N,N]
  out.ec = tape.softmax_last(mean_map);

  // contract the node axis: recon[i,t,d] = sum_j A[i,j] * z[j,t,d]
  Val z_flat =
      tape.reshape(z_t, {cfg.n_nodes, cfg.n_points * cfg.embed_dim});
  Val mixed = tape.reshape(tape.matmul(out.ec, z_flat),
                           {cfg.n_nodes, cfg.n_points, cfg.embed_dim});
  out.recon3d = detail::ffn_block(tape, p, "sfa", mixed, z_t, cfg, mode, rng);
  return out;
}

/// [N,T,D] -> [N,T]: mix channels down to one and drop the axis.
inline Val readout(Tape& tape, Val recon3d, const detail::BoundParams& p,
                   const ModelConfig& cfg) {
  Val y = tape.affine_last(recon3d, p("readout.kernel"), p("readout.bias"));
  return tape.reshape(y, {cfg.n_nodes, cfg.n_points});
}

/// Sum of squared residuals over all N*T entries plus alpha * sum |A|.
inline Val reconstruction_loss(Tape& tape, Val x, Val x_hat, Val ec,
                               double alpha) {
  Val sse = tape.sum_squares(tape.sub(x, x_hat));
  return tape.add(sse, tape.scale(tape.abs_sum(ec), alpha));
}

/// Full pass from an input already on the tape (parameter or constant).
inline ForwardResult forward_on(Tape& tape, Val x_in,
                                const detail::BoundParams& p,
                                const ModelConfig& cfg, Mode mode, Rng& rng) {
  Val xs = embed_and_encode(tape, x_in, p, cfg, mode, rng);
  Val xp = fourier_attention(tape, xs, p, cfg, mode, rng);
  Val z_t = temporal_attention(tape, xp, p, cfg, mode, rng);
  FusionResult fused = fusion_attention(tape, xp, z_t, p, cfg, mode, rng);
  ForwardResult result;
  result.x_hat = readout(tape, fused.recon3d, p, cfg);
  result.ec = fused.ec;
  result.maps = std::move(fused.maps);
  result.loss = reconstruction_loss(tape, x_in, result.x_hat, result.ec,
                                    cfg.sparsity_weight);
  return result;
}

/// Full pass over one subject [N,T]. Deterministic in eval mode.
inline ForwardResult forward(Tape& tape, const Tensor& x,
                             const ParameterStore& params,
                             const ModelConfig& cfg, Mode mode, Rng& rng) {
  if (x.rank() != 2 || x.extent(0) != cfg.n_nodes ||
      x.extent(1) != cfg.n_points) {
    throw ShapeError("forward: input shape " + shape_str(x.shape()) +
                     " does not match config [" + std::to_string(cfg.n_nodes) +
                     "," + std::to_string(cfg.n_points) + "]");
  }
  detail::BoundParams p = detail::bind_params(tape, params);
  return forward_on(tape, tape.constant(x), p, cfg, mode, rng);
}

// ---------------------------------------------------------------------------
// Group-level connectivity
// ---------------------------------------------------------------------------

/// Eval-mode forward on every subject; the group estimate is the arithmetic
/// mean of the per-subject matrices with rows renormalized (a numerical
/// safeguard only, the mean of row-stochastic matrices is row-stochastic).
inline Tensor extract_ec(const TimeSeriesDataset& ds,
                         const ParameterStore& params, const ModelConfig& cfg) {
  if (ds.subjects.empty()) throw ValueError("extract_ec: empty dataset");
  Tensor acc({cfg.n_nodes, cfg.n_nodes});
  Rng unused(0);
  for (const Tensor& x : ds.subjects) {
    Tape tape;
    ForwardResult r = forward(tape, x, params, cfg, Mode::kEval, unused);
    const Tensor& a = tape.value(r.ec);
    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += a[i];
  }
  const double inv = 1.0 / static_cast<double>(ds.subjects.size());
  for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] *= inv;
  for (std::size_t i = 0; i < cfg.n_nodes; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < cfg.n_nodes; ++j) row_sum += acc.at({i, j});
    for (std::size_t j = 0; j < cfg.n_nodes; ++j) acc.at({i, j}) /= row_sum;
  }
  return acc;
}

}  // namespace fsta
