// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <string>

#include "sota/backbone.hpp"
#include "sota/datapipe.hpp"
#include "sota/diffusion.hpp"

namespace sota {

struct PolicyConfig {
  BackboneConfig backbone;
  DiffusionConfig diff;
  std::string objective = "diffusion";  // diffusion | bc

  size_t cond_width() const { return backbone.t_window * backbone.fused_width(); }
  void validate() const;
};

// A trained sensor-only policy: fusion backbone + conditional denoiser
// plus the dataset normalization statistics it was trained with.
struct Policy {
  PolicyConfig cfg;
  NoiseSchedule schedule;
  ParamStore params;
  pipe::NormStats stats;

  static Policy create(const PolicyConfig& cfg, const pipe::NormStats& stats, uint64_t seed);

  // fused window encoding flattened to the conditioning vector
  Tensor encode_cond(const WindowObs& window) const;  // [1, cond_width]

  // diffusion training graph for one sample; differentiable end to end
  Var loss_graph(Tape& t, const ParamStore& ps, const WindowObs& window,
                 const Tensor& chunk_norm, size_t step, const Tensor& eps) const;
  // squared-error baseline objective
  Var bc_loss_graph(Tape& t, const ParamStore& ps, const WindowObs& window,
                    const Tensor& chunk_norm) const;

  // normalized action chunk [T_h, d_action]; deterministic given rng
  Tensor sample_chunk_norm(const WindowObs& window, Rng& rng, size_t n_infer_override = 0) const;

  // checkpoint = params.bin (SOTA format) + policy.json sidecar
  void save(const std::string& dir) const;
  static Policy load(const std::string& dir);
};

// Receding-horizon controller: keeps the last T_w frames (repeat-first
// padded at episode start), samples a chunk, executes a prefix of it,
// then re-plans.
class Controller {
 public:
  Controller(const Policy& policy, Rng rng);

  void reset(Rng rng);
  // feed the newest frame, get the next pose-increment action
  // (denormalized, [d_action])
  Tensor step(const FrameObs& obs);

  size_t plans_made() const { return plans_made_; }

 private:
  const Policy& policy_;
  Rng rng_;
  std::deque<FrameObs> buffer_;
  std::vector<Tensor> plan_;
  size_t plan_pos_ = 0;
  size_t plans_made_ = 0;
};

// One optimizer step over a minibatch, parallel across samples with a
// fixed reduction order; returns the mean sample loss.
struct TrainConfig {
  size_t epochs = 200;
  size_t samples_per_epoch = 512;
  size_t batch = 32;
  double lr = 1e-3;
  double warmup_frac = 0.05;
  double weight_decay = 1e-4;
  bool ema = false;  // optional EMA of weights, default off
  double ema_decay = 0.999;
  size_t threads = 2;
  uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_lr;
  double final_loss = 0.0;
};

TrainResult train_policy(Policy& policy, const pipe::Dataset& ds, const TrainConfig& tc,
                         const std::string& loss_csv_path = "");

}  // namespace sota
