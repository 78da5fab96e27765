// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sota/backbone.hpp"
#include "sota/util.hpp"
#include "support/naive_ref.hpp"

using namespace sota;

namespace {

BackboneConfig tiny_cfg(const std::string& variant = "sota") {
  BackboneConfig cfg;
  cfg.att.d_model = 8;
  cfg.att.d_att = 4;
  cfg.att.n_sub = 2;
  cfg.att.patch_h = 2;
  cfg.att.patch_w = 2;
  cfg.att.n_heads = 2;
  cfg.img_h = 8;
  cfg.img_w = 8;
  cfg.patch = 4;
  cfg.t_window = 3;
  cfg.tf_heads = 2;
  cfg.tf_layers = 2;
  cfg.d_ff = 16;
  cfg.d_forcefeat = 5;
  cfg.variant = variant;
  return cfg;
}

Tensor randn(Rng& rng, std::vector<size_t> shape, double s = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = s * rng.normal();
  return t;
}

Tensor rand01(Rng& rng, std::vector<size_t> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.uniform();
  return t;
}

WindowObs random_window(Rng& rng, const BackboneConfig& cfg) {
  WindowObs w;
  for (size_t i = 0; i < cfg.t_window; ++i) {
    FrameObs f;
    f.image = rand01(rng, {cfg.img_h, cfg.img_w, 3});
    f.force = rand01(rng, {cfg.d_force});
    f.pose = rand01(rng, {cfg.d_pose});
    w.push_back(std::move(f));
  }
  return w;
}

}  // namespace

TEST_CASE("zero inputs with zero-init output layers give zero tokens") {
  BackboneConfig cfg = tiny_cfg();
  FusionBackbone bb{"backbone", cfg};
  ParamStore ps;
  Rng rng(1);
  bb.init(ps, rng);
  // zero the final layers of the token encoders
  for (const char* k : {"backbone.force_tok.fc2.w", "backbone.force_tok.fc2.b",
                        "backbone.pose_tok.fc2.w", "backbone.pose_tok.fc2.b"}) {
    Tensor& p = ps.at(k);
    std::fill(p.data.begin(), p.data.end(), 0.0);
  }

  Tape t;
  Var force = t.constant(Tensor::zeros({1, cfg.d_force}));
  Var pose = t.constant(Tensor::zeros({1, cfg.d_pose}));
  auto [zf, zp, zfp] = bb.encode_tokens(t, ps, force, pose);
  (void)zfp;
  CHECK(max_abs_diff(t.val(zf), Tensor::zeros({1, cfg.att.d_model})) == 0.0);
  CHECK(max_abs_diff(t.val(zp), Tensor::zeros({1, cfg.att.d_model})) == 0.0);
}

TEST_CASE("token encoder matches a scalar MLP oracle and its shape contract") {
  BackboneConfig cfg = tiny_cfg();
  FusionBackbone bb{"backbone", cfg};
  ParamStore ps;
  Rng rng(0);
  bb.init(ps, rng);
  Tensor force = randn(rng, {1, cfg.d_force});
  Tensor pose = randn(rng, {1, cfg.d_pose});

  Tape t;
  auto [zf, zp, zfp] = bb.encode_tokens(t, ps, t.constant(force), t.constant(pose));
  CHECK(t.val(zf).shape == std::vector<size_t>{1, cfg.att.d_model});
  CHECK(t.val(zp).shape == std::vector<size_t>{1, cfg.att.d_model});
  CHECK(t.val(zfp).shape == std::vector<size_t>{1, cfg.att.d_att});

  const size_t dm = cfg.att.d_model;
  auto ref = testref::naive_mlp(force.data, ps.at("backbone.force_tok.fc1.w").data,
                                ps.at("backbone.force_tok.fc1.b").data,
                                ps.at("backbone.force_tok.fc2.w").data,
                                ps.at("backbone.force_tok.fc2.b").data, cfg.d_force, dm, dm);
  for (size_t j = 0; j < dm; ++j) CHECK(std::fabs(t.val(zf)(0, j) - ref[j]) <= 1e-12);
}

TEST_CASE("patch embedding: grid size, zero-image identity, corner encoding") {
  BackboneConfig cfg = tiny_cfg();
  FusionBackbone bb{"backbone", cfg};
  ParamStore ps;
  Rng rng(2);
  bb.init(ps, rng);

  // a 56x56 image with 8x8 patches gives the 7x7 = 49 grid
  {
    BackboneConfig desk;  // defaults: 56x56, patch 8, 7x7 grid
    desk.validate();
    CHECK(desk.att.n_patch() == 49);
    CHECK(desk.img_h / desk.patch == 7);
  }

  // zero standardized input + zero projection leaves exactly the 2D encoding
  Tensor& w = ps.at("backbone.patch.w");
  Tensor& b = ps.at("backbone.patch.b");
  std::fill(w.data.begin(), w.data.end(), 0.0);
  std::fill(b.data.begin(), b.data.end(), 0.0);
  Tape t;
  Var z = bb.patch_embed(t, ps, Tensor::zeros({cfg.img_h, cfg.img_w, 3}));
  Tensor pe = nn::sinusoidal_2d_encoding(2, 2, cfg.att.d_model);
  CHECK(max_abs_diff(t.val(z), pe) == 0.0);

  // at grid position (0,0): sin components 0, cos components 1
  const size_t nf = cfg.att.d_model / 4;
  for (size_t i = 0; i < nf; ++i) {
    CHECK(pe(0, i) == 0.0);
    CHECK(pe(0, nf + i) == 1.0);
    CHECK(pe(0, 2 * nf + i) == 0.0);
    CHECK(pe(0, 3 * nf + i) == 1.0);
  }
}

TEST_CASE("gate is uniform at init and always lives on the simplex") {
  BackboneConfig cfg = tiny_cfg();
  FusionBackbone bb{"backbone", cfg};
  ParamStore ps;
  Rng rng(3);
  bb.init(ps, rng);

  Tape t;
  Tensor tok = randn(rng, {1, cfg.att.d_model});
  Tensor three = Tensor::zeros({3, cfg.att.d_model});
  for (size_t m = 0; m < 3; ++m)
    for (size_t j = 0; j < cfg.att.d_model; ++j) three(m, j) = tok(0, j);
  auto [frame, gate] = bb.framewise_fuse(t, ps, t.constant(three));
  CHECK(t.val(frame).shape == std::vector<size_t>{1, cfg.att.d_model});
  for (double g : t.val(gate).data) CHECK(g == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // random tokens, random gate head: still a simplex row
  Rng r2(4);
  ps.at("backbone.gate.w") = randn(r2, {cfg.att.d_model, 3});
  ps.at("backbone.gate.b") = randn(r2, {3});
  for (int trial = 0; trial < 10; ++trial) {
    Tape tt;
    auto [fr, gt] = bb.framewise_fuse(tt, ps, tt.constant(randn(r2, {3, cfg.att.d_model})));
    (void)fr;
    double s = 0.0;
    for (double g : tt.val(gt).data) {
      CHECK(g >= 0.0);
      s += g;
    }
    CHECK(std::fabs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("temporal fusion: repeated frames, causality, window contract") {
  BackboneConfig cfg = tiny_cfg();
  cfg.time_encoding = false;
  FusionBackbone bb{"backbone", cfg};
  ParamStore ps;
  Rng rng(5);
  bb.init(ps, rng);

  // identical frames, no time encoding: all output rows equal
  Tensor row = randn(rng, {1, cfg.att.d_model});
  Tensor frames = Tensor::zeros({cfg.t_window, cfg.att.d_model});
  for (size_t i = 0; i < cfg.t_window; ++i)
    for (size_t j = 0; j < cfg.att.d_model; ++j) frames(i, j) = row(0, j);
  Tape t;
  const Tensor& out = t.val(bb.temporal_fuse(t, ps, t.constant(frames)));
  for (size_t i = 1; i < cfg.t_window; ++i)
    for (size_t j = 0; j < cfg.att.d_model; ++j)
      CHECK(out(i, j) == doctest::Approx(out(0, j)).epsilon(1e-12));

  // causal mask: perturbing frame k changes only rows >= k
  Tensor base = randn(rng, {cfg.t_window, cfg.att.d_model});
  Tape tb;
  const Tensor ref = tb.val(bb.temporal_fuse(tb, ps, tb.constant(base)));
  for (size_t k = 0; k < cfg.t_window; ++k) {
    Tensor pert = base;
    for (size_t j = 0; j < cfg.att.d_model; ++j) pert(k, j) += 0.37 + static_cast<double>(j);
    Tape tp;
    const Tensor got = tp.val(bb.temporal_fuse(tp, ps, tp.constant(pert)));
    for (size_t i = 0; i < cfg.t_window; ++i) {
      double diff = 0.0;
      for (size_t j = 0; j < cfg.att.d_model; ++j)
        diff = std::max(diff, std::fabs(got(i, j) - ref(i, j)));
      if (i < k) {
        CHECK(diff == 0.0);
      } else if (i == k) {
        CHECK(diff > 0.0);
      }
    }
  }

  // window length contract
  Tape tw;
  CHECK_THROWS_AS(
      (void)bb.temporal_fuse(tw, ps, tw.constant(randn(rng, {cfg.t_window + 1, cfg.att.d_model}))),
      NumericError);
}

TEST_CASE("full window forward is deterministic and variant widths agree") {
  for (const std::string variant : {"sota", "cross_attention", "concat"}) {
    BackboneConfig cfg = tiny_cfg(variant);
    FusionBackbone bb{"backbone", cfg};
    ParamStore ps;
    Rng rng(7);
    bb.init(ps, rng);
    Rng rw(8);
    WindowObs window = random_window(rw, cfg);

    Tape t1, t2;
    WindowOutput o1 = bb.forward_window(t1, ps, window);
    WindowOutput o2 = bb.forward_window(t2, ps, window);
    CHECK(t1.val(o1.fused).shape == std::vector<size_t>{cfg.t_window, cfg.fused_width()});
    CHECK(max_abs_diff(t1.val(o1.fused), t2.val(o2.fused)) == 0.0);

    if (variant == "sota") CHECK(o1.sota.size() == cfg.t_window);
    if (variant == "cross_attention") CHECK(o1.ca_weights.size() == cfg.t_window);
  }
}

TEST_CASE("zero-masking a modality is visible in the fused encoding") {
  BackboneConfig cfg = tiny_cfg();
  FusionBackbone bb{"backbone", cfg};
  ParamStore ps;
  Rng rng(9);
  bb.init(ps, rng);
  Rng rw(10);
  WindowObs window = random_window(rw, cfg);

  Tape t1;
  WindowOutput base = bb.forward_window(t1, ps, window);
  BackboneConfig masked_cfg = cfg;
  masked_cfg.mask_force = true;
  FusionBackbone masked{"backbone", masked_cfg};
  Tape t2;
  WindowOutput got = masked.forward_window(t2, ps, window);
  CHECK(max_abs_diff(t1.val(base.fused), t2.val(got.fused)) > 1e-9);
}

TEST_CASE("backbone gradients pass finite-difference checks end to end") {
  for (const std::string variant : {"sota", "cross_attention", "concat"}) {
    for (uint64_t seed = 0; seed < 2; ++seed) {
      BackboneConfig cfg = tiny_cfg(variant);
      cfg.t_window = 2;
      FusionBackbone bb{"backbone", cfg};
      ParamStore ps;
      Rng rng(400 + seed);
      bb.init(ps, rng);
      Rng rw(500 + seed);
      WindowObs window = random_window(rw, cfg);

      auto fn = [&](Tape& t, ParamStore& p) {
        WindowOutput out = bb.forward_window(t, p, window);
        return t.mean_all(t.square(out.fused));
      };
      Rng sampler(600 + seed);
      auto report = check_gradients(fn, ps, 1e-5, 1e-4, 10, &sampler);
      INFO(variant, " seed ", seed, " worst ", report.worst, " at ", report.worst_name);
      CHECK(report.pass);
    }
  }
}
