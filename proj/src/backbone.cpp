// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "sota/backbone.hpp"

#include "sota/util.hpp"

namespace sota {

size_t BackboneConfig::fused_width() const {
  return is_concat() ? att.d_model + d_forcefeat + d_pose : att.d_model;
}

void BackboneConfig::validate() const {
  att.validate();
  if (variant != "sota" && variant != "cross_attention" && variant != "concat")
    throw ConfigError("unknown fusion variant: " + variant);
  if (patch == 0 || img_h % patch != 0 || img_w % patch != 0)
    throw ConfigError("image size must be divisible by the patch size");
  if (img_h / patch != att.patch_h || img_w / patch != att.patch_w)
    throw ConfigError("patch grid does not match the attention config");
  if (t_window == 0) throw ConfigError("window length must be positive");
  if (att.d_model % 4 != 0) throw ConfigError("d_model must be divisible by 4 (2D encoding)");
}

Tensor standardize_image(const Tensor& img01) {
  // fixed mean/std 0.5/0.5
  Tensor out = img01;
  for (auto& v : out.data) v = (v - 0.5) / 0.5;
  return out;
}

void FusionBackbone::init(ParamStore& ps, const Rng& rng) const {
  cfg.validate();
  const size_t dm = cfg.att.d_model;
  const size_t da = cfg.att.d_att;
  const size_t pdim = cfg.patch * cfg.patch * 3;

  nn::Linear{name + ".patch", pdim, dm, true}.init(ps, rng);

  if (cfg.is_concat()) {
    nn::Mlp{name + ".force_feat", cfg.d_force, 2 * cfg.d_forcefeat, cfg.d_forcefeat}.init(ps,
                                                                                          rng);
    return;
  }

  nn::Mlp{name + ".force_tok", cfg.d_force, dm, dm}.init(ps, rng);
  nn::Mlp{name + ".pose_tok", cfg.d_pose, dm, dm}.init(ps, rng);
  nn::Linear{name + ".fp", 2 * dm, da, true}.init(ps, rng);
  nn::Linear{name + ".vis_proj", da, dm, true}.init(ps, rng);

  if (cfg.variant == "sota") {
    SotaAttention{name + ".att", cfg.att}.init(ps, rng);
  } else {
    CrossAttention{name + ".att", cfg.att}.init(ps, rng);
  }

  nn::TransformerEncoder{name + ".frame", cfg.tf_layers, dm, cfg.tf_heads, cfg.d_ff, false}
      .init(ps, rng);
  // gate head starts at zero so the gate is uniform at init
  nn::Linear{name + ".gate", dm, 3, true}.init_zero(ps);
  nn::TransformerEncoder{name + ".temporal", cfg.tf_layers, dm, cfg.tf_heads, cfg.d_ff, true}
      .init(ps, rng);
}

std::array<Var, 3> FusionBackbone::encode_tokens(Tape& t, const ParamStore& ps, Var force_obs,
                                                 Var pose_obs) const {
  const size_t dm = cfg.att.d_model;
  Var zf = nn::Mlp{name + ".force_tok", cfg.d_force, dm, dm}(t, ps, force_obs);
  Var zp = nn::Mlp{name + ".pose_tok", cfg.d_pose, dm, dm}(t, ps, pose_obs);
  Var zfp = nn::Linear{name + ".fp", 2 * dm, cfg.att.d_att, true}(t, ps, t.concat_cols({zf, zp}));
  return {zf, zp, zfp};
}

Var FusionBackbone::patch_embed(Tape& t, const ParamStore& ps, const Tensor& image_std) const {
  if (image_std.shape != std::vector<size_t>{cfg.img_h, cfg.img_w, 3})
    throw NumericError("patch_embed image shape mismatch");
  const size_t gh = cfg.img_h / cfg.patch, gw = cfg.img_w / cfg.patch;
  const size_t np = gh * gw, pdim = cfg.patch * cfg.patch * 3;

  Tensor patches = Tensor::zeros({np, pdim});
  for (size_t pr = 0; pr < gh; ++pr)
    for (size_t pc = 0; pc < gw; ++pc) {
      const size_t p = pr * gw + pc;
      for (size_t dy = 0; dy < cfg.patch; ++dy)
        for (size_t dx = 0; dx < cfg.patch; ++dx)
          for (size_t c = 0; c < 3; ++c)
            patches(p, (dy * cfg.patch + dx) * 3 + c) =
                image_std.data[((pr * cfg.patch + dy) * cfg.img_w + pc * cfg.patch + dx) * 3 + c];
    }

  Var tokens = nn::Linear{name + ".patch", pdim, cfg.att.d_model, true}(
      t, ps, t.constant(std::move(patches), "patches"));
  return t.add(tokens,
               t.constant(nn::sinusoidal_2d_encoding(gh, gw, cfg.att.d_model), "pos2d"));
}

std::pair<Var, Var> FusionBackbone::framewise_fuse(Tape& t, const ParamStore& ps, Var tokens) const {
  const size_t dm = cfg.att.d_model;
  if (t.val(tokens).rows() != 3 || t.val(tokens).cols() != dm)
    throw NumericError("framewise_fuse expects [3, d_model] tokens");
  Var ctx = nn::TransformerEncoder{name + ".frame", cfg.tf_layers, dm, cfg.tf_heads, cfg.d_ff,
                                   false}(t, ps, tokens);
  Var pooled = t.reshape(t.scale(t.sum_axis0(ctx), 1.0 / 3.0), {1, dm});
  Var gate = t.softmax_vec(t.reshape(nn::Linear{name + ".gate", dm, 3, true}(t, ps, pooled), {3}));
  Var frame = t.matmul(t.reshape(gate, {1, 3}), ctx);
  return {frame, gate};
}

Var FusionBackbone::temporal_fuse(Tape& t, const ParamStore& ps, Var frames) const {
  const size_t dm = cfg.att.d_model;
  if (t.val(frames).rows() != cfg.t_window || t.val(frames).cols() != dm)
    throw NumericError("temporal_fuse expects [T_w, d_model] input");
  Var x = frames;
  if (cfg.time_encoding)
    x = t.add(x, t.constant(nn::sinusoidal_time_encoding(cfg.t_window, dm), "time_pe"));
  return nn::TransformerEncoder{name + ".temporal", cfg.tf_layers, dm, cfg.tf_heads, cfg.d_ff,
                                true}(t, ps, x);
}

WindowOutput FusionBackbone::forward_window(Tape& t, const ParamStore& ps,
                                            const WindowObs& window) const {
  if (window.size() != cfg.t_window)
    throw NumericError("window length " + std::to_string(window.size()) + " != T_w");
  const size_t dm = cfg.att.d_model;
  WindowOutput out;

  std::vector<Var> rows;
  for (const FrameObs& frame : window) {
    Tensor force = cfg.mask_force ? Tensor::zeros({cfg.d_force}) : frame.force;
    Tensor pose = cfg.mask_pose ? Tensor::zeros({cfg.d_pose}) : frame.pose;
    require_shape(force, {cfg.d_force}, "force observation");
    require_shape(pose, {cfg.d_pose}, "pose observation");
    Var force_row = t.reshape(t.constant(std::move(force), "obs_force"), {1, cfg.d_force});
    Var pose_row = t.reshape(t.constant(std::move(pose), "obs_pose"), {1, cfg.d_pose});
    Var z_img = patch_embed(t, ps, standardize_image(frame.image));

    if (cfg.is_concat()) {
      const size_t np = cfg.att.n_patch();
      Var z_vis = t.reshape(t.scale(t.sum_axis0(z_img), 1.0 / static_cast<double>(np)), {1, dm});
      Var z_force = nn::Mlp{name + ".force_feat", cfg.d_force, 2 * cfg.d_forcefeat,
                            cfg.d_forcefeat}(t, ps, force_row);
      rows.push_back(t.concat_cols({z_vis, z_force, pose_row}));
      continue;
    }

    auto [zf, zp, zfp] = encode_tokens(t, ps, force_row, pose_row);
    Var z_vis_att{};
    if (cfg.variant == "sota") {
      SotaOutput so = SotaAttention{name + ".att", cfg.att}.forward(t, ps, zfp, z_img);
      out.sota.push_back(so);
      z_vis_att = so.fused;
    } else {
      auto [z_ca, zeta] = CrossAttention{name + ".att", cfg.att}.forward(t, ps, zfp, z_img);
      out.ca_weights.push_back(zeta);
      z_vis_att = z_ca;
    }
    Var z_vis = nn::Linear{name + ".vis_proj", cfg.att.d_att, dm, true}(t, ps, z_vis_att);
    Var tokens3 = t.concat_rows({zf, zp, z_vis});
    out.tokens.push_back({zf, zp, z_vis});
    auto [z_frame, gate] = framewise_fuse(t, ps, tokens3);
    out.gates.push_back(gate);
    rows.push_back(z_frame);
  }

  Var stacked = t.concat_rows(rows);
  out.fused = cfg.is_concat() ? stacked : temporal_fuse(t, ps, stacked);
  return out;
}

}  // namespace sota
