// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

#include "sota/attention.hpp"

namespace sota {

// One synchronized frame as seen by the policy: image in [0,1], force and
// pose channels already min-max normalized by the data pipeline.
struct FrameObs {
  Tensor image;  // [H, W, 3]
  Tensor force;  // [d_force]
  Tensor pose;   // [d_pose]
};

using WindowObs = std::vector<FrameObs>;

struct BackboneConfig {
  AttentionConfig att;
  size_t d_force = 9;
  size_t d_pose = 10;
  size_t t_window = 8;
  size_t img_h = 56;
  size_t img_w = 56;
  size_t patch = 8;
  size_t tf_heads = 4;
  size_t tf_layers = 2;
  size_t d_ff = 128;
  size_t d_forcefeat = 16;  // concatenation baseline force feature width
  std::string variant = "sota";  // sota | cross_attention | concat
  bool mask_force = false;  // zero-masking ablations, train and eval alike
  bool mask_pose = false;
  bool time_encoding = true;

  bool is_concat() const { return variant == "concat"; }
  size_t fused_width() const;
  void validate() const;
};

// standardization applied to [0,1] images before the patch embedding
Tensor standardize_image(const Tensor& img01);

struct WindowOutput {
  Var fused;  // [T_w, fused_width]
  // per-frame diagnostics (sota / cross_attention variants)
  std::vector<SotaOutput> sota;
  std::vector<Var> ca_weights;          // [n_patch] per frame
  std::vector<Var> gates;               // [3] per frame
  std::vector<std::array<Var, 3>> tokens;  // pre-fusion (force, pose, visual) tokens
};

struct FusionBackbone {
  std::string name = "backbone";
  BackboneConfig cfg;

  void init(ParamStore& ps, const Rng& rng) const;

  // (Z_force [1,d_model], Z_pose [1,d_model], z_fp [1,d_att])
  std::array<Var, 3> encode_tokens(Tape& t, const ParamStore& ps, Var force_obs, Var pose_obs) const;

  // standardized image [H,W,3] -> patch tokens [n_patch, d_model]
  Var patch_embed(Tape& t, const ParamStore& ps, const Tensor& image_std) const;

  // three tokens [3, d_model] -> (Z_frame [1, d_model], gate [3])
  std::pair<Var, Var> framewise_fuse(Tape& t, const ParamStore& ps, Var tokens) const;

  // [T_w, d_model] -> [T_w, d_model], causal
  Var temporal_fuse(Tape& t, const ParamStore& ps, Var frames) const;

  WindowOutput forward_window(Tape& t, const ParamStore& ps, const WindowObs& window) const;
};

}  // namespace sota
