// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "sota/nn.hpp"

#include <cmath>

#include "sota/kernels.hpp"
#include "sota/util.hpp"

namespace sota::nn {

Tensor glorot_uniform(Rng& rng, size_t fan_in, size_t fan_out, std::vector<size_t> shape) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

void Linear::init(ParamStore& ps, const Rng& rng) const {
  Rng r = rng.sub(name);
  ps.add(name + ".w", glorot_uniform(r, din, dout, {din, dout}));
  if (bias) ps.add(name + ".b", Tensor::zeros({dout}));
}

void Linear::init_zero(ParamStore& ps) const {
  ps.add(name + ".w", Tensor::zeros({din, dout}));
  if (bias) ps.add(name + ".b", Tensor::zeros({dout}));
}

Var Linear::operator()(Tape& t, const ParamStore& ps, Var x) const {
  Var y = t.matmul(x, t.param(ps, name + ".w"));
  if (bias) y = t.add(y, t.broadcast_row(t.param(ps, name + ".b"), t.val(y).rows()));
  return y;
}

// ---------------------------------------------------------------------------
// Mlp
// ---------------------------------------------------------------------------

void Mlp::init(ParamStore& ps, const Rng& rng) const {
  Linear{name + ".fc1", din, dh, true}.init(ps, rng);
  Linear{name + ".fc2", dh, dout, true}.init(ps, rng);
}

Var Mlp::operator()(Tape& t, const ParamStore& ps, Var x) const {
  Var h = t.tanh_op(Linear{name + ".fc1", din, dh, true}(t, ps, x));
  return Linear{name + ".fc2", dh, dout, true}(t, ps, h);
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

void LayerNorm::init(ParamStore& ps) const {
  ps.add(name + ".g", Tensor::full({dim}, 1.0));
  ps.add(name + ".b", Tensor::zeros({dim}));
}

Var LayerNorm::operator()(Tape& t, const ParamStore& ps, Var x) const {
  const size_t m = t.val(x).rows();
  const size_t n = t.val(x).cols();
  if (n != dim) throw NumericError("LayerNorm dim mismatch in " + name);
  const double inv_n = 1.0 / static_cast<double>(n);
  Var mu = t.scale(t.sum_axis1(x), inv_n);                       // [M]
  Var xc = t.sub(x, t.broadcast_col(mu, n));                     // centered
  Var var = t.scale(t.sum_axis1(t.square(xc)), inv_n);           // [M]
  Var istd = t.div(t.constant(Tensor::full({m}, 1.0)), t.sqrt_op(t.add_const(var, eps)));
  Var norm = t.mul(xc, t.broadcast_col(istd, n));
  Var scaled = t.mul(norm, t.broadcast_row(t.param(ps, name + ".g"), m));
  return t.add(scaled, t.broadcast_row(t.param(ps, name + ".b"), m));
}

// ---------------------------------------------------------------------------
// TransformerLayer
// ---------------------------------------------------------------------------

void TransformerLayer::init(ParamStore& ps, const Rng& rng) const {
  if (d_model % n_heads != 0)
    throw ConfigError("transformer d_model not divisible by heads in " + name);
  Linear{name + ".wq", d_model, d_model, true}.init(ps, rng);
  Linear{name + ".wk", d_model, d_model, true}.init(ps, rng);
  Linear{name + ".wv", d_model, d_model, true}.init(ps, rng);
  Linear{name + ".wo", d_model, d_model, true}.init(ps, rng);
  LayerNorm{name + ".ln1", d_model}.init(ps);
  LayerNorm{name + ".ln2", d_model}.init(ps);
  Linear{name + ".ff1", d_model, d_ff, true}.init(ps, rng);
  Linear{name + ".ff2", d_ff, d_model, true}.init(ps, rng);
}

Var TransformerLayer::operator()(Tape& t, const ParamStore& ps, Var x) const {
  const size_t seq = t.val(x).rows();
  const size_t dh = d_model / n_heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

  Var xin = LayerNorm{name + ".ln1", d_model}(t, ps, x);
  Var q = Linear{name + ".wq", d_model, d_model, true}(t, ps, xin);
  Var k = Linear{name + ".wk", d_model, d_model, true}(t, ps, xin);
  Var v = Linear{name + ".wv", d_model, d_model, true}(t, ps, xin);

  Var mask{};  // additive causal mask, shared across heads
  if (causal) {
    Tensor m = Tensor::zeros({seq, seq});
    for (size_t i = 0; i < seq; ++i)
      for (size_t j = i + 1; j < seq; ++j) m(i, j) = -1e9;
    mask = t.constant(std::move(m), "causal_mask");
  }

  std::vector<Var> heads;
  for (size_t h = 0; h < n_heads; ++h) {
    Var qh = t.slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = t.slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = t.slice_cols(v, h * dh, (h + 1) * dh);
    Var scores = t.scale(t.matmul(qh, t.transpose(kh)), scl);
    if (causal) scores = t.add(scores, mask);
    Var attn = t.softmax_rows(scores);
    heads.push_back(t.matmul(attn, vh));
  }
  Var att = Linear{name + ".wo", d_model, d_model, true}(t, ps, t.concat_cols(heads));
  Var h1 = t.add(x, att);

  Var h1n = LayerNorm{name + ".ln2", d_model}(t, ps, h1);
  Var ff = Linear{name + ".ff2", d_ff, d_model, true}(
      t, ps, t.gelu(Linear{name + ".ff1", d_model, d_ff, true}(t, ps, h1n)));
  return t.add(h1, ff);
}

void TransformerEncoder::init(ParamStore& ps, const Rng& rng) const {
  for (size_t l = 0; l < layers; ++l)
    TransformerLayer{name + ".l" + std::to_string(l), d_model, n_heads, d_ff, causal}.init(ps,
                                                                                           rng);
}

Var TransformerEncoder::operator()(Tape& t, const ParamStore& ps, Var x) const {
  for (size_t l = 0; l < layers; ++l)
    x = TransformerLayer{name + ".l" + std::to_string(l), d_model, n_heads, d_ff, causal}(t, ps,
                                                                                          x);
  return x;
}

// ---------------------------------------------------------------------------
// encodings
// ---------------------------------------------------------------------------

Tensor sinusoidal_time_encoding(size_t t_len, size_t dim) {
  if (dim % 2 != 0) throw ConfigError("time encoding dim must be even");
  Tensor pe = Tensor::zeros({t_len, dim});
  const size_t half = dim / 2;
  for (size_t pos = 0; pos < t_len; ++pos)
    for (size_t i = 0; i < half; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
      pe(pos, i) = std::sin(static_cast<double>(pos) * freq);
      pe(pos, half + i) = std::cos(static_cast<double>(pos) * freq);
    }
  return pe;
}

Tensor sinusoidal_2d_encoding(size_t h, size_t w, size_t dim) {
  if (dim % 4 != 0) throw ConfigError("2d encoding dim must be divisible by 4");
  const size_t nf = dim / 4;
  Tensor pe = Tensor::zeros({h * w, dim});
  for (size_t r = 0; r < h; ++r)
    for (size_t c = 0; c < w; ++c) {
      const size_t p = r * w + c;
      for (size_t i = 0; i < nf; ++i) {
        const double freq =
            std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(nf));
        pe(p, i) = std::sin(static_cast<double>(r) * freq);
        pe(p, nf + i) = std::cos(static_cast<double>(r) * freq);
        pe(p, 2 * nf + i) = std::sin(static_cast<double>(c) * freq);
        pe(p, 3 * nf + i) = std::cos(static_cast<double>(c) * freq);
      }
    }
  return pe;
}

Tensor diffusion_step_embedding(size_t step, size_t dim) {
  if (dim % 2 != 0) throw ConfigError("step embedding dim must be even");
  Tensor e = Tensor::zeros({dim});
  const size_t half = dim / 2;
  for (size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    e.data[i] = std::sin(static_cast<double>(step) * freq);
    e.data[half + i] = std::cos(static_cast<double>(step) * freq);
  }
  return e;
}

Var normalize_rows(Tape& t, Var x, double floor) {
  const size_t n = t.val(x).cols();
  const size_t m = t.val(x).rows();
  Var norm = t.sqrt_op(t.sum_axis1(t.square(x)));  // [M]
  Var safe = t.clamp_min(norm, floor);
  Var inv = t.div(t.constant(Tensor::full({m}, 1.0)), safe);
  return t.mul(x, t.broadcast_col(inv, n));
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

void AdamW::step(ParamStore& ps, double lr_now) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (auto& [name, p] : ps.params) {
    const Tensor& g = ps.grad(name);
    Tensor& m = m_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    Tensor& v = v_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    const bool decay = p.rank() >= 2;
    for (size_t i = 0; i < p.size(); ++i) {
      m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g.data[i];
      v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      double upd = mhat / (std::sqrt(vhat) + eps);
      if (decay) upd += weight_decay * p.data[i];
      p.data[i] -= lr_now * upd;
    }
  }
}

double cosine_warmup_lr(double base_lr, size_t step, size_t total_steps, double warmup_frac,
                        double floor_frac) {
  if (total_steps == 0) return base_lr;
  const auto warm = static_cast<size_t>(warmup_frac * static_cast<double>(total_steps));
  if (warm > 0 && step < warm)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  const double progress = warm >= total_steps
                              ? 1.0
                              : static_cast<double>(step - warm) /
                                    static_cast<double>(total_steps - warm);
  const double lo = base_lr * floor_frac;
  return lo + 0.5 * (base_lr - lo) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

void Ema::update(const ParamStore& ps) {
  if (!initialized) {
    shadow.params = ps.params;
    for (const auto& [name, p] : ps.params) shadow.grads[name] = Tensor::zeros(p.shape);
    initialized = true;
    return;
  }
  for (const auto& [name, p] : ps.params) {
    Tensor& s = shadow.at(name);
    for (size_t i = 0; i < p.size(); ++i)
      s.data[i] = decay * s.data[i] + (1.0 - decay) * p.data[i];
  }
}

}  // namespace sota::nn
