// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>

#include "sota/autodiff.hpp"
#include "sota/nn.hpp"

namespace sota {

struct AttentionConfig {
  size_t d_model = 64;  // backbone feature width (paper configuration: 512)
  size_t d_att = 32;    // OT / attention width (paper configuration: 256)
  size_t n_sub = 2;     // OT sub-queries
  size_t patch_h = 7;
  size_t patch_w = 7;
  double eps_ot = 0.2;
  size_t n_ot = 5;
  size_t n_heads = 4;  // cross-attention baseline only

  size_t n_patch() const { return patch_h * patch_w; }
  void validate() const;
};

// Cosine-distance cost between row-normalized queries and keys:
// C[l,p] = -<q_l / ||q_l||, k_p / ||k_p||>, with a norm floor so zero
// rows (occlusion tests) stay finite.
Var cosine_cost(Tape& t, Var queries, Var keys, double norm_floor = 1e-8);

struct SotaOutput {
  Var fused;          // [1, d_att] tied-merge output z_sota
  Var messages;       // [n_sub, d_att] per-sub-query transport messages
  Var plan;           // [n_sub, n_patch]
  Var supply;         // [n_sub] learned row marginal
  Var patch_weights;  // [n_patch] effective weights zeta = Pi^T gamma
};

// OT-based attention: force--pose conditioning generates sub-queries and
// a supply distribution, transport against uniform patch capacity is
// solved by unrolled log-domain Sinkhorn, and messages merge with weights
// tied to the supply.
struct SotaAttention {
  std::string name = "sota";
  AttentionConfig cfg;

  void init(ParamStore& ps, const Rng& rng) const;

  // z_fp [1, d_att] -> (queries [n_sub, d_att], supply [n_sub])
  std::pair<Var, Var> subqueries_and_supply(Tape& t, const ParamStore& ps, Var z_fp) const;

  // z_fp [1, d_att], z_img [n_patch, d_model]
  SotaOutput forward(Tape& t, const ParamStore& ps, Var z_fp, Var z_img) const;
};

// Multi-head scaled dot-product baseline with a single force--pose query.
// Returns (z_ca [1, d_att], head-mean patch weights [n_patch]).
struct CrossAttention {
  std::string name = "ca";
  AttentionConfig cfg;

  void init(ParamStore& ps, const Rng& rng) const;
  std::pair<Var, Var> forward(Tape& t, const ParamStore& ps, Var z_fp, Var z_img) const;
};

// Plain concatenation in the fixed order (vision, force, pose).
Var concat_fuse(Tape& t, Var z_vis, Var z_force, Var o_pose);

}  // namespace sota
