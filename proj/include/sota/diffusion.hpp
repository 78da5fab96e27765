// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sota/nn.hpp"

namespace sota {

struct DiffusionConfig {
  size_t n_diff = 100;   // training diffusion steps
  size_t n_infer = 10;   // reverse steps at inference
  size_t t_horizon = 16;  // action chunk length
  size_t d_action = 3;
  size_t w1 = 32, w2 = 64, w3 = 128;  // temporal conv widths
  size_t d_cond = 64;
  size_t d_step = 32;
  size_t exec_prefix = 8;  // actions executed per chunk before re-planning

  void validate() const;
};

// Squared-cosine noise schedule. alpha_bar[0] = 1; per-step noise rates
// are clipped to (1e-5, 0.999) and alpha_bar rebuilt from the clipped
// rates so the two stay consistent.
struct NoiseSchedule {
  std::vector<double> alpha_bar;  // size n+1, index by step s in 0..n
  std::vector<double> g;          // size n+1, g[0] unused

  size_t steps() const { return g.empty() ? 0 : g.size() - 1; }
  static NoiseSchedule squared_cosine(size_t n_diff);
  void validate() const;
};

// closed-form jump: y_s = sqrt(abar_s) y0 + sqrt(1 - abar_s) eps
Tensor forward_noise(const Tensor& y0, size_t s, const Tensor& eps, const NoiseSchedule& sched);

// evenly spaced descending reverse-step indices including n_diff and 1
std::vector<size_t> inference_substeps(size_t n_diff, size_t n_infer);

// Temporal conditional denoiser: a 3-level 1-D conv encoder-decoder over
// the chunk axis with skip connections; conditioning (diffusion step
// embedding + flattened fused encoding) enters through per-level
// feature-wise affine modulation. Output has the chunk's shape.
struct Denoiser {
  std::string name = "denoiser";
  DiffusionConfig cfg;
  size_t cond_in = 0;  // flattened conditioning width

  void init(ParamStore& ps, const Rng& rng) const;
  // y_noisy [T_h, d_action], cond [1, cond_in] -> eps_hat [T_h, d_action]
  Var forward(Tape& t, const ParamStore& ps, Var y_noisy, size_t step, Var cond) const;
};

// mean squared error of the eps prediction over chunk entries
Var eps_mse(Tape& t, Var eps_hat, const Tensor& eps);

// One reverse denoising call: given y_s and the step index, return the
// eps estimate. Lets tests substitute closed-form stubs for the network.
using DenoiseFn = std::function<Tensor(const Tensor& y_s, size_t step)>;

// DDPM ancestral sampling over the strided sub-schedule; deterministic
// for a fixed rng state.
Tensor sample_chunk(const DenoiseFn& denoise, const NoiseSchedule& sched, size_t n_infer,
                    size_t t_horizon, size_t d_action, Rng& rng);

// Behavior-cloning regression baseline: direct chunk prediction from the
// conditioning, trained with the squared-error objective. Used to expose
// mode collapse on multimodal action distributions.
struct BcRegressor {
  std::string name = "bc";
  size_t cond_in = 0;
  size_t t_horizon = 16;
  size_t d_action = 3;
  size_t d_hidden = 64;

  void init(ParamStore& ps, const Rng& rng) const;
  Var predict(Tape& t, const ParamStore& ps, Var cond) const;  // [T_h, d_action]
  Var loss(Tape& t, const ParamStore& ps, Var cond, const Tensor& chunk) const;
};

}  // namespace sota
