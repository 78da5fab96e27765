// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "sota/autodiff.hpp"
#include "sota/rng.hpp"

namespace sota::nn {

// Parameters are registered under dotted names derived from the module
// name; initialization draws from a per-name substream so the result does
// not depend on registration order.

Tensor glorot_uniform(Rng& rng, size_t fan_in, size_t fan_out, std::vector<size_t> shape);

struct Linear {
  std::string name;
  size_t din = 0;
  size_t dout = 0;
  bool bias = true;

  void init(ParamStore& ps, const Rng& rng) const;
  void init_zero(ParamStore& ps) const;
  Var operator()(Tape& t, const ParamStore& ps, Var x) const;  // [M,din] -> [M,dout]
};

// two-layer tanh MLP
struct Mlp {
  std::string name;
  size_t din = 0;
  size_t dh = 0;
  size_t dout = 0;

  void init(ParamStore& ps, const Rng& rng) const;
  Var operator()(Tape& t, const ParamStore& ps, Var x) const;
};

struct LayerNorm {
  std::string name;
  size_t dim = 0;
  double eps = 1e-5;

  void init(ParamStore& ps) const;
  Var operator()(Tape& t, const ParamStore& ps, Var x) const;  // per row
};

// Pre-norm transformer encoder layer; standard scaled dot-product
// multi-head self-attention plus a GELU feedforward.
struct TransformerLayer {
  std::string name;
  size_t d_model = 0;
  size_t n_heads = 0;
  size_t d_ff = 0;
  bool causal = false;

  void init(ParamStore& ps, const Rng& rng) const;
  Var operator()(Tape& t, const ParamStore& ps, Var x) const;  // [T,d] -> [T,d]
};

struct TransformerEncoder {
  std::string name;
  size_t layers = 2;
  size_t d_model = 0;
  size_t n_heads = 0;
  size_t d_ff = 0;
  bool causal = false;

  void init(ParamStore& ps, const Rng& rng) const;
  Var operator()(Tape& t, const ParamStore& ps, Var x) const;
};

// sin/cos over the frame index, [t_len x dim]
Tensor sinusoidal_time_encoding(size_t t_len, size_t dim);

// Patch-grid encoding: dim/4 frequencies each for row-sin, row-cos,
// col-sin, col-cos, concatenated in that order. [h*w x dim]
Tensor sinusoidal_2d_encoding(size_t h, size_t w, size_t dim);

// embedding of a diffusion step index, [dim]
Tensor diffusion_step_embedding(size_t step, size_t dim);

// l2-normalizes each row with a norm floor
Var normalize_rows(Tape& t, Var x, double floor);

struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // applied to rank >= 2 tensors only

  void step(ParamStore& ps, double lr_now);

 private:
  std::map<std::string, Tensor> m_, v_;
  size_t t_ = 0;
};

// cosine schedule with linear warmup, in [0,1] progress
double cosine_warmup_lr(double base_lr, size_t step, size_t total_steps, double warmup_frac,
                        double floor_frac = 0.05);

// exponential moving average of parameters (optional, default off in
// training configs)
struct Ema {
  double decay = 0.999;
  ParamStore shadow;
  bool initialized = false;

  void update(const ParamStore& ps);
};

}  // namespace sota::nn
