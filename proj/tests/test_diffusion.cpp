// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sota/diffusion.hpp"
#include "sota/util.hpp"

using namespace sota;

namespace {

DiffusionConfig tiny_cfg() {
  DiffusionConfig cfg;
  cfg.n_diff = 50;
  cfg.n_infer = 25;
  cfg.t_horizon = 4;
  cfg.d_action = 1;
  cfg.w1 = 4;
  cfg.w2 = 6;
  cfg.w3 = 8;
  cfg.d_cond = 8;
  cfg.d_step = 8;
  cfg.exec_prefix = 2;
  return cfg;
}

Tensor randn(Rng& rng, std::vector<size_t> shape, double s = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = s * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("squared-cosine schedule invariants hold across sizes") {
  for (size_t n : {10u, 50u, 100u}) {
    NoiseSchedule s = NoiseSchedule::squared_cosine(n);
    CHECK(s.alpha_bar[0] == 1.0);
    for (size_t i = 1; i <= n; ++i) {
      CHECK(s.alpha_bar[i] < s.alpha_bar[i - 1]);
      CHECK(s.g[i] >= 1e-5);
      CHECK(s.g[i] <= 0.999);
    }
    if (n == 100) CHECK(s.alpha_bar[n] < 0.01);
  }
}

TEST_CASE("inference substeps are evenly spaced and hit both ends") {
  auto steps = inference_substeps(100, 10);
  CHECK(steps == std::vector<size_t>{100, 89, 78, 67, 56, 45, 34, 23, 12, 1});
  CHECK(inference_substeps(100, 1) == std::vector<size_t>{100});
  auto full = inference_substeps(50, 50);
  CHECK(full.front() == 50);
  CHECK(full.back() == 1);
  CHECK(full.size() == 50);
  CHECK_THROWS_AS(inference_substeps(10, 11), NumericError);
}

TEST_CASE("forward noising: boundary cases and the closed-form jump") {
  NoiseSchedule sched = NoiseSchedule::squared_cosine(50);
  Rng rng(1);
  Tensor y0 = randn(rng, {4, 2});
  Tensor eps = randn(rng, {4, 2});

  // s = 0 keeps the chunk untouched
  CHECK(max_abs_diff(forward_noise(y0, 0, eps, sched), y0) == 0.0);

  // zero chunk reduces to the scaled noise
  Tensor zeros = Tensor::zeros({4, 2});
  Tensor ys = forward_noise(zeros, 17, eps, sched);
  const double c1 = std::sqrt(1.0 - sched.alpha_bar[17]);
  for (size_t i = 0; i < ys.size(); ++i)
    CHECK(ys.data[i] == doctest::Approx(c1 * eps.data[i]).epsilon(1e-15));

  CHECK_THROWS_AS(forward_noise(y0, 51, eps, sched), NumericError);
}

TEST_CASE("forward-noise variance matches the closed form within 2% (Monte Carlo)") {
  NoiseSchedule sched = NoiseSchedule::squared_cosine(100);
  Rng rng(7);
  const double var_y0 = 2.25;
  for (size_t s : {10u, 55u, 95u}) {
    const size_t n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (size_t i = 0; i < n; ++i) {
      Tensor y0 = Tensor::scalar(std::sqrt(var_y0) * rng.normal());
      Tensor eps = Tensor::scalar(rng.normal());
      const double v = forward_noise(y0, s, eps, sched).data[0];
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    const double expect = sched.alpha_bar[s] * var_y0 + (1.0 - sched.alpha_bar[s]);
    CHECK(var == doctest::Approx(expect).epsilon(0.02));
  }
}

TEST_CASE("eps loss is zero for a perfect prediction and ~1 for a zero prediction") {
  Rng rng(3);
  Tensor eps = randn(rng, {8, 2});
  {
    Tape t;
    Var loss = eps_mse(t, t.constant(eps), eps);
    CHECK(t.val(loss).data[0] == 0.0);
  }
  {
    // with eps ~ N(0,1), E||eps||^2 per entry is 1
    const size_t n = 50000;
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
      Tape t;
      Tensor e = randn(rng, {4, 1});
      acc += t.val(eps_mse(t, t.constant(Tensor::zeros({4, 1})), e)).data[0];
    }
    CHECK(acc / n == doctest::Approx(1.0).epsilon(0.02));
  }
}

TEST_CASE("denoiser gradients pass finite-difference checks") {
  DiffusionConfig cfg = tiny_cfg();
  for (uint64_t seed = 0; seed < 3; ++seed) {
    Denoiser den{"denoiser", cfg, /*cond_in=*/6};
    ParamStore ps;
    Rng rng(700 + seed);
    den.init(ps, rng);
    ps.add("cond_probe", randn(rng, {1, 6}));
    Tensor y = randn(rng, {cfg.t_horizon, cfg.d_action});
    Tensor eps = randn(rng, {cfg.t_horizon, cfg.d_action});

    auto fn = [&](Tape& t, ParamStore& p) {
      Var eps_hat = den.forward(t, p, t.constant(y), 13, t.param(p, "cond_probe"));
      return eps_mse(t, eps_hat, eps);
    };
    Rng sampler(800 + seed);
    auto report = check_gradients(fn, ps, 1e-5, 1e-4, 12, &sampler);
    INFO("seed ", seed, " worst ", report.worst, " at ", report.worst_name);
    CHECK(report.pass);
  }
}

TEST_CASE("sampling is deterministic under a fixed seed") {
  DiffusionConfig cfg = tiny_cfg();
  Denoiser den{"denoiser", cfg, 6};
  ParamStore ps;
  Rng rng(9);
  den.init(ps, rng);
  Tensor cond = randn(rng, {1, 6});

  DenoiseFn fn = [&](const Tensor& y, size_t s) {
    Tape t;
    return t.val(den.forward(t, ps, t.constant(y), s, t.constant(cond)));
  };
  NoiseSchedule sched = NoiseSchedule::squared_cosine(cfg.n_diff);
  Rng r1(42), r2(42), r3(43);
  Tensor a = sample_chunk(fn, sched, cfg.n_infer, cfg.t_horizon, cfg.d_action, r1);
  Tensor b = sample_chunk(fn, sched, cfg.n_infer, cfg.t_horizon, cfg.d_action, r2);
  Tensor c = sample_chunk(fn, sched, cfg.n_infer, cfg.t_horizon, cfg.d_action, r3);
  CHECK(max_abs_diff(a, b) == 0.0);
  CHECK(max_abs_diff(a, c) > 0.0);
}

TEST_CASE("a perfect-eps stub on a delta dataset recovers the chunk exactly") {
  NoiseSchedule sched = NoiseSchedule::squared_cosine(60);
  Tensor target = Tensor::zeros({8, 2});
  for (size_t i = 0; i < target.size(); ++i) target.data[i] = 0.3 + 0.1 * (i % 5);

  DenoiseFn perfect = [&](const Tensor& y, size_t s) {
    // the eps that maps the delta-mass chunk to y under the closed form
    const double ab = sched.alpha_bar[s];
    Tensor eps = Tensor::zeros(y.shape);
    for (size_t i = 0; i < y.size(); ++i)
      eps.data[i] = (y.data[i] - std::sqrt(ab) * target.data[i]) / std::sqrt(1.0 - ab);
    return eps;
  };
  Rng rng(11);
  Tensor got = sample_chunk(perfect, sched, 60, 8, 2, rng);
  CHECK(max_abs_diff(got, target) <= 1e-9);
}

TEST_CASE("toy bimodal chunks: diffusion keeps both modes, regression collapses") {
  DiffusionConfig cfg = tiny_cfg();
  const size_t cond_in = 2;
  Denoiser den{"denoiser", cfg, cond_in};
  ParamStore ps;
  Rng init_rng(21);
  den.init(ps, init_rng);
  const Tensor cond = Tensor::zeros({1, cond_in});
  NoiseSchedule sched = NoiseSchedule::squared_cosine(cfg.n_diff);

  // train on chunks that are constant +1 or -1
  nn::AdamW opt;
  opt.lr = 2e-3;
  Rng rng(22);
  const size_t steps = 900, batch = 24;
  for (size_t step = 0; step < steps; ++step) {
    ps.zero_grads();
    double loss_acc = 0.0;
    for (size_t b = 0; b < batch; ++b) {
      const double mode = rng.uniform() < 0.5 ? 1.0 : -1.0;
      Tensor y0 = Tensor::full({cfg.t_horizon, cfg.d_action}, mode);
      const size_t s = 1 + rng.uniform_int(cfg.n_diff);
      Tensor eps = randn(rng, {cfg.t_horizon, cfg.d_action});
      Tape t;
      Var loss = eps_mse(
          t, den.forward(t, ps, t.constant(forward_noise(y0, s, eps, sched)), s, t.constant(cond)),
          eps);
      loss_acc += t.val(loss).data[0];
      t.backward_scalar(loss, ps.grads);
    }
    for (auto& [k, g] : ps.grads)
      for (auto& v : g.data) v /= batch;
    opt.step(ps, nn::cosine_warmup_lr(opt.lr, step, steps, 0.05));
    (void)loss_acc;
  }

  DenoiseFn fn = [&](const Tensor& y, size_t s) {
    Tape t;
    return t.val(den.forward(t, ps, t.constant(y), s, t.constant(cond)));
  };
  Rng sample_rng(23);
  size_t pos = 0, neg = 0, middle = 0;
  const size_t n_samples = 200;
  for (size_t i = 0; i < n_samples; ++i) {
    Tensor chunk = sample_chunk(fn, sched, cfg.n_infer, cfg.t_horizon, cfg.d_action, sample_rng);
    double mean = 0.0;
    for (double v : chunk.data) mean += v;
    mean /= static_cast<double>(chunk.size());
    if (mean > 0.5) ++pos;
    else if (mean < -0.5) ++neg;
    else ++middle;
  }
  INFO("pos ", pos, " neg ", neg, " middle ", middle);
  CHECK(pos > 0);
  CHECK(neg > 0);
  CHECK(static_cast<double>(middle) / n_samples < 0.05);

  // the squared-error regressor predicts the conditional mean near 0
  BcRegressor bc{"bc", cond_in, cfg.t_horizon, cfg.d_action, 16};
  ParamStore bps;
  bc.init(bps, init_rng);
  nn::AdamW bopt;
  bopt.lr = 5e-3;
  Rng brng(24);
  for (size_t step = 0; step < 400; ++step) {
    bps.zero_grads();
    for (size_t b = 0; b < batch; ++b) {
      const double mode = brng.uniform() < 0.5 ? 1.0 : -1.0;
      Tape t;
      Var loss = bc.loss(t, bps, t.constant(cond),
                         Tensor::full({cfg.t_horizon, cfg.d_action}, mode));
      t.backward_scalar(loss, bps.grads);
    }
    for (auto& [k, g] : bps.grads)
      for (auto& v : g.data) v /= batch;
    bopt.step(bps, bopt.lr);
  }
  Tape t;
  const Tensor& pred = t.val(bc.predict(t, bps, t.constant(cond)));
  for (double v : pred.data) {
    CHECK(v > -0.5);
    CHECK(v < 0.5);
  }
}
