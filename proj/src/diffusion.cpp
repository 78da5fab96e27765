// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "sota/diffusion.hpp"

#include <cmath>

#include "sota/util.hpp"

namespace sota {

void DiffusionConfig::validate() const {
  if (n_diff < 1) throw ConfigError("n_diff must be >= 1");
  if (n_infer < 1 || n_infer > n_diff) throw ConfigError("need 1 <= n_infer <= n_diff");
  if (t_horizon % 4 != 0) throw ConfigError("t_horizon must be divisible by 4");
  if (d_action == 0) throw ConfigError("d_action must be positive");
  if (exec_prefix < 1 || exec_prefix > t_horizon)
    throw ConfigError("exec_prefix must lie in [1, t_horizon]");
}

NoiseSchedule NoiseSchedule::squared_cosine(size_t n_diff) {
  if (n_diff < 1) throw ConfigError("n_diff must be >= 1");
  auto f = [](double u) {
    const double a = (u + 0.008) / 1.008 * (3.14159265358979323846 / 2.0);
    const double c = std::cos(a);
    return c * c;
  };
  const double f0 = f(0.0);
  NoiseSchedule s;
  s.alpha_bar.assign(n_diff + 1, 1.0);
  s.g.assign(n_diff + 1, 0.0);
  double prev_raw = 1.0;
  for (size_t i = 1; i <= n_diff; ++i) {
    const double raw = f(static_cast<double>(i) / static_cast<double>(n_diff)) / f0;
    double gi = 1.0 - raw / prev_raw;
    gi = std::min(std::max(gi, 1e-5), 0.999);
    s.g[i] = gi;
    s.alpha_bar[i] = s.alpha_bar[i - 1] * (1.0 - gi);
    prev_raw = raw;
  }
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  if (alpha_bar.empty() || alpha_bar[0] != 1.0)
    throw NumericError("schedule must start at alpha_bar = 1");
  for (size_t i = 1; i < alpha_bar.size(); ++i) {
    if (!(alpha_bar[i] < alpha_bar[i - 1]))
      throw NumericError("alpha_bar must be strictly decreasing");
    if (!(g[i] > 0.0 && g[i] < 1.0)) throw NumericError("noise rate outside (0,1)");
  }
}

Tensor forward_noise(const Tensor& y0, size_t s, const Tensor& eps, const NoiseSchedule& sched) {
  if (s > sched.steps()) throw NumericError("diffusion step out of range");
  if (!y0.same_shape(eps)) throw NumericError("noise shape must match the chunk");
  const double ab = sched.alpha_bar[s];
  const double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
  Tensor out = y0;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] = c0 * y0.data[i] + c1 * eps.data[i];
  return out;
}

std::vector<size_t> inference_substeps(size_t n_diff, size_t n_infer) {
  if (n_infer < 1) throw NumericError("n_infer must be >= 1");
  if (n_infer > n_diff) throw NumericError("n_infer cannot exceed n_diff");
  std::vector<size_t> steps;
  if (n_infer == 1) {
    steps.push_back(n_diff);
    return steps;
  }
  for (size_t i = 0; i < n_infer; ++i) {
    const double v = static_cast<double>(n_diff) -
                     static_cast<double>(i) * static_cast<double>(n_diff - 1) /
                         static_cast<double>(n_infer - 1);
    steps.push_back(static_cast<size_t>(std::llround(v)));
  }
  return steps;
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

namespace {

Tensor conv_glorot(Rng& rng, size_t co, size_t ci, size_t k) {
  const double limit = std::sqrt(6.0 / static_cast<double>(ci * k + co * k));
  Tensor t = Tensor::zeros({co, ci, k});
  for (auto& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

struct ConvSpec {
  std::string name;
  size_t co, ci, k;
};

void init_conv(ParamStore& ps, const Rng& rng, const ConvSpec& c, bool zero = false) {
  Rng r = rng.sub(c.name);
  ps.add(c.name + ".w", zero ? Tensor::zeros({c.co, c.ci, c.k}) : conv_glorot(r, c.co, c.ci, c.k));
  ps.add(c.name + ".b", Tensor::zeros({c.co}));
}

Var apply_conv(Tape& t, const ParamStore& ps, const std::string& name, Var x, size_t stride,
               size_t pad) {
  return t.conv1d(x, t.param(ps, name + ".w"), t.param(ps, name + ".b"), stride, pad);
}

}  // namespace

void Denoiser::init(ParamStore& ps, const Rng& rng) const {
  cfg.validate();
  if (cond_in == 0) throw ConfigError("denoiser conditioning width not set");
  const size_t da = cfg.d_action, w1 = cfg.w1, w2 = cfg.w2, w3 = cfg.w3;

  nn::Mlp{name + ".step", cfg.d_step, cfg.d_cond, cfg.d_cond}.init(ps, rng);
  nn::Linear{name + ".cond", cond_in, cfg.d_cond, true}.init(ps, rng);

  init_conv(ps, rng, {name + ".in", w1, da, 3});
  init_conv(ps, rng, {name + ".enc1", w1, w1, 3});
  init_conv(ps, rng, {name + ".down1", w2, w1, 3});
  init_conv(ps, rng, {name + ".enc2", w2, w2, 3});
  init_conv(ps, rng, {name + ".down2", w3, w2, 3});
  init_conv(ps, rng, {name + ".mid", w3, w3, 3});
  init_conv(ps, rng, {name + ".up2", w2, w3, 3});
  init_conv(ps, rng, {name + ".dec2", w2, 2 * w2, 3});
  init_conv(ps, rng, {name + ".up1", w1, w2, 3});
  init_conv(ps, rng, {name + ".dec1", w1, 2 * w1, 3});
  init_conv(ps, rng, {name + ".out", da, w1, 3}, /*zero=*/true);

  const size_t gw = 2 * cfg.d_cond;
  nn::Linear{name + ".film1", gw, 2 * w1, true}.init_zero(ps);
  nn::Linear{name + ".film2", gw, 2 * w2, true}.init_zero(ps);
  nn::Linear{name + ".film3", gw, 2 * w3, true}.init_zero(ps);
  nn::Linear{name + ".film4", gw, 2 * w2, true}.init_zero(ps);
  nn::Linear{name + ".film5", gw, 2 * w1, true}.init_zero(ps);
}

Var Denoiser::forward(Tape& t, const ParamStore& ps, Var y_noisy, size_t step, Var cond) const {
  const size_t th = cfg.t_horizon, da = cfg.d_action;
  if (t.val(y_noisy).shape != std::vector<size_t>{th, da})
    throw NumericError("denoiser chunk shape mismatch");
  if (t.val(cond).shape != std::vector<size_t>{1, cond_in})
    throw NumericError("denoiser conditioning shape mismatch");

  Var emb = t.reshape(t.constant(nn::diffusion_step_embedding(step, cfg.d_step), "step_emb"),
                      {1, cfg.d_step});
  Var sv = nn::Mlp{name + ".step", cfg.d_step, cfg.d_cond, cfg.d_cond}(t, ps, emb);
  Var cv = nn::Linear{name + ".cond", cond_in, cfg.d_cond, true}(t, ps, cond);
  Var gvec = t.concat_cols({sv, cv});  // [1, 2 d_cond]
  const size_t gw = 2 * cfg.d_cond;

  auto film = [&](const std::string& fname, Var x, size_t channels) {
    Var f = nn::Linear{name + "." + fname, gw, 2 * channels, true}(t, ps, gvec);
    Var scale = t.reshape(t.slice_cols(f, 0, channels), {channels});
    Var shift = t.reshape(t.slice_cols(f, channels, 2 * channels), {channels});
    const size_t len = t.val(x).shape[1];
    Var scaled = t.mul(x, t.broadcast_col(t.add_const(scale, 1.0), len));
    return t.add(scaled, t.broadcast_col(shift, len));
  };

  Var x = t.transpose(y_noisy);  // [da, T_h]
  Var h0 = apply_conv(t, ps, name + ".in", x, 1, 1);
  Var e1 = t.gelu(film("film1", apply_conv(t, ps, name + ".enc1", h0, 1, 1), cfg.w1));
  Var d1 = t.gelu(apply_conv(t, ps, name + ".down1", e1, 2, 1));
  Var e2 = t.gelu(film("film2", apply_conv(t, ps, name + ".enc2", d1, 1, 1), cfg.w2));
  Var d2 = t.gelu(apply_conv(t, ps, name + ".down2", e2, 2, 1));
  Var mid = t.gelu(film("film3", apply_conv(t, ps, name + ".mid", d2, 1, 1), cfg.w3));
  Var u2 = t.gelu(apply_conv(t, ps, name + ".up2", t.upsample2(mid), 1, 1));
  Var f2 = t.gelu(
      film("film4", apply_conv(t, ps, name + ".dec2", t.concat_rows({u2, e2}), 1, 1), cfg.w2));
  Var u1 = t.gelu(apply_conv(t, ps, name + ".up1", t.upsample2(f2), 1, 1));
  Var f1 = t.gelu(
      film("film5", apply_conv(t, ps, name + ".dec1", t.concat_rows({u1, e1}), 1, 1), cfg.w1));
  Var eps = apply_conv(t, ps, name + ".out", f1, 1, 1);
  return t.transpose(eps);
}

Var eps_mse(Tape& t, Var eps_hat, const Tensor& eps) {
  return t.mse(eps_hat, t.constant(eps, "eps_target"));
}

Tensor sample_chunk(const DenoiseFn& denoise, const NoiseSchedule& sched, size_t n_infer,
                    size_t t_horizon, size_t d_action, Rng& rng) {
  const std::vector<size_t> steps = inference_substeps(sched.steps(), n_infer);
  Tensor y = Tensor::zeros({t_horizon, d_action});
  for (auto& v : y.data) v = rng.normal();

  for (size_t i = 0; i < steps.size(); ++i) {
    const size_t s = steps[i];
    const size_t s_prev = (i + 1 < steps.size()) ? steps[i + 1] : 0;
    const Tensor eps_hat = denoise(y, s);
    if (!eps_hat.same_shape(y)) throw NumericError("denoiser output shape mismatch");
    const double ab = sched.alpha_bar[s];
    const double ab_prev = sched.alpha_bar[s_prev];
    const double alpha_eff = ab / ab_prev;
    const double beta_eff = 1.0 - alpha_eff;

    Tensor x0 = Tensor::zeros(y.shape);
    const double c0 = 1.0 / std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    for (size_t j = 0; j < y.size(); ++j) x0.data[j] = c0 * (y.data[j] - c1 * eps_hat.data[j]);

    if (s_prev == 0) {
      y = std::move(x0);
      break;
    }
    const double w0 = std::sqrt(ab_prev) * beta_eff / (1.0 - ab);
    const double w1 = std::sqrt(alpha_eff) * (1.0 - ab_prev) / (1.0 - ab);
    const double sigma = std::sqrt(beta_eff * (1.0 - ab_prev) / (1.0 - ab));
    for (size_t j = 0; j < y.size(); ++j)
      y.data[j] = w0 * x0.data[j] + w1 * y.data[j] + sigma * rng.normal();
  }
  if (!y.finite()) throw NumericError("non-finite sample from the reverse process");
  return y;
}

// ---------------------------------------------------------------------------
// BcRegressor
// ---------------------------------------------------------------------------

void BcRegressor::init(ParamStore& ps, const Rng& rng) const {
  nn::Mlp{name + ".net", cond_in, d_hidden, t_horizon * d_action}.init(ps, rng);
}

Var BcRegressor::predict(Tape& t, const ParamStore& ps, Var cond) const {
  Var flat = nn::Mlp{name + ".net", cond_in, d_hidden, t_horizon * d_action}(t, ps, cond);
  return t.reshape(flat, {t_horizon, d_action});
}

Var BcRegressor::loss(Tape& t, const ParamStore& ps, Var cond, const Tensor& chunk) const {
  return t.mse(predict(t, ps, cond), t.constant(chunk, "chunk_target"));
}

}  // namespace sota
