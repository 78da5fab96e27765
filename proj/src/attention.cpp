// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "sota/attention.hpp"

#include <cmath>

#include "sota/ot.hpp"
#include "sota/util.hpp"

namespace sota {

void AttentionConfig::validate() const {
  if (d_model == 0 || d_att == 0 || n_sub == 0 || patch_h == 0 || patch_w == 0)
    throw ConfigError("attention dims must be positive");
  if (!(eps_ot > 0.0)) throw ConfigError("eps_ot must be positive");
  if (n_ot < 1) throw ConfigError("n_ot must be >= 1");
  if (n_heads == 0 || d_att % n_heads != 0)
    throw ConfigError("d_att must be divisible by the head count");
}

Var cosine_cost(Tape& t, Var queries, Var keys, double norm_floor) {
  Var qn = nn::normalize_rows(t, queries, norm_floor);
  Var kn = nn::normalize_rows(t, keys, norm_floor);
  return t.neg(t.matmul(qn, t.transpose(kn)));
}

// ---------------------------------------------------------------------------
// SotaAttention
// ---------------------------------------------------------------------------

void SotaAttention::init(ParamStore& ps, const Rng& rng) const {
  cfg.validate();
  // queries carry a bias; keys/values are plain projections
  nn::Linear{name + ".qry", cfg.d_att, cfg.n_sub * cfg.d_att, true}.init(ps, rng);
  nn::Linear{name + ".gamma", cfg.d_att, cfg.n_sub, true}.init(ps, rng);
  nn::Linear{name + ".key", cfg.d_model, cfg.d_att, false}.init(ps, rng);
  nn::Linear{name + ".val", cfg.d_model, cfg.d_att, false}.init(ps, rng);
}

std::pair<Var, Var> SotaAttention::subqueries_and_supply(Tape& t, const ParamStore& ps,
                                                         Var z_fp) const {
  Var q = nn::Linear{name + ".qry", cfg.d_att, cfg.n_sub * cfg.d_att, true}(t, ps, z_fp);
  Var queries = t.reshape(q, {cfg.n_sub, cfg.d_att});
  Var logits = nn::Linear{name + ".gamma", cfg.d_att, cfg.n_sub, true}(t, ps, z_fp);
  Var supply = t.softmax_vec(t.reshape(logits, {cfg.n_sub}));
  return {queries, supply};
}

SotaOutput SotaAttention::forward(Tape& t, const ParamStore& ps, Var z_fp, Var z_img) const {
  const size_t np = cfg.n_patch();
  if (t.val(z_img).rows() != np || t.val(z_img).cols() != cfg.d_model)
    throw NumericError("z_img shape mismatch in SO-TA forward");

  auto [queries, supply] = subqueries_and_supply(t, ps, z_fp);
  Var keys = nn::Linear{name + ".key", cfg.d_model, cfg.d_att, false}(t, ps, z_img);
  Var values = nn::Linear{name + ".val", cfg.d_model, cfg.d_att, false}(t, ps, z_img);

  Var cost = cosine_cost(t, queries, keys);
  const Tensor capacity = Tensor::full({np}, 1.0 / static_cast<double>(np));
  ot::SinkhornVars sv =
      ot::sinkhorn_logdomain_graph(t, cost, supply, capacity, cfg.eps_ot, cfg.n_ot);

  // messages z_sub[l] = sum_p Pi[l,p] v[p]
  Var messages = t.matmul(sv.plan, values);
  // tied merge, route 1: z = sum_l gamma[l] z_sub[l]
  Var supply_row = t.reshape(supply, {1, cfg.n_sub});
  Var fused = t.matmul(supply_row, messages);
  // route 2: z = sum_p zeta[p] v[p], zeta = Pi^T gamma
  Var zeta = t.reshape(t.matmul(supply_row, sv.plan), {np});
  Var fused_by_patch = t.matmul(t.reshape(zeta, {1, np}), values);

  // both routes of the tied merge must agree
  const double diff = max_abs_diff(t.val(fused), t.val(fused_by_patch));
  if (diff > 1e-9)
    throw NumericError("tied-merge identity violated: routes differ by " + std::to_string(diff));

  return SotaOutput{fused, messages, sv.plan, supply, zeta};
}

// ---------------------------------------------------------------------------
// CrossAttention
// ---------------------------------------------------------------------------

void CrossAttention::init(ParamStore& ps, const Rng& rng) const {
  cfg.validate();
  nn::Linear{name + ".qry", cfg.d_att, cfg.d_att, true}.init(ps, rng);
  nn::Linear{name + ".key", cfg.d_model, cfg.d_att, false}.init(ps, rng);
  nn::Linear{name + ".val", cfg.d_model, cfg.d_att, false}.init(ps, rng);
  nn::Linear{name + ".out", cfg.d_att, cfg.d_att, true}.init(ps, rng);
}

std::pair<Var, Var> CrossAttention::forward(Tape& t, const ParamStore& ps, Var z_fp,
                                            Var z_img) const {
  const size_t np = cfg.n_patch();
  const size_t dh = cfg.d_att / cfg.n_heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(cfg.d_att));

  Var q = nn::Linear{name + ".qry", cfg.d_att, cfg.d_att, true}(t, ps, z_fp);  // [1, d_att]
  Var k = nn::Linear{name + ".key", cfg.d_model, cfg.d_att, false}(t, ps, z_img);
  Var v = nn::Linear{name + ".val", cfg.d_model, cfg.d_att, false}(t, ps, z_img);

  std::vector<Var> heads;
  Var weight_sum{};
  for (size_t h = 0; h < cfg.n_heads; ++h) {
    Var qh = nn::normalize_rows(t, t.slice_cols(q, h * dh, (h + 1) * dh), 1e-8);
    Var kh = nn::normalize_rows(t, t.slice_cols(k, h * dh, (h + 1) * dh), 1e-8);
    Var vh = t.slice_cols(v, h * dh, (h + 1) * dh);
    Var scores = t.scale(t.matmul(qh, t.transpose(kh)), scl);  // [1, np]
    Var zeta = t.softmax_rows(scores);
    heads.push_back(t.matmul(zeta, vh));  // [1, dh]
    weight_sum = (h == 0) ? zeta : t.add(weight_sum, zeta);
  }
  Var out = nn::Linear{name + ".out", cfg.d_att, cfg.d_att, true}(t, ps, t.concat_cols(heads));
  Var zeta_mean = t.reshape(t.scale(weight_sum, 1.0 / static_cast<double>(cfg.n_heads)), {np});
  return {out, zeta_mean};
}

Var concat_fuse(Tape& t, Var z_vis, Var z_force, Var o_pose) {
  auto as_row = [&t](Var v) {
    const Tensor& tv = t.val(v);
    return tv.rank() == 1 ? t.reshape(v, {1, tv.size()}) : v;
  };
  Var cat = t.concat_cols({as_row(z_vis), as_row(z_force), as_row(o_pose)});
  return t.reshape(cat, {t.val(cat).cols()});
}

}  // namespace sota
