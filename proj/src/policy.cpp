// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "sota/policy.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "sota/util.hpp"

namespace sota {

using nlohmann::json;

void PolicyConfig::validate() const {
  backbone.validate();
  diff.validate();
  if (objective != "diffusion" && objective != "bc")
    throw ConfigError("unknown training objective: " + objective);
}

Policy Policy::create(const PolicyConfig& cfg, const pipe::NormStats& stats, uint64_t seed) {
  cfg.validate();
  Policy p;
  p.cfg = cfg;
  p.schedule = NoiseSchedule::squared_cosine(cfg.diff.n_diff);
  p.stats = stats;
  p.params.init_seed = seed;
  Rng rng(seed);
  FusionBackbone{"backbone", cfg.backbone}.init(p.params, rng);
  if (cfg.objective == "bc") {
    BcRegressor{"bc", cfg.cond_width(), cfg.diff.t_horizon, cfg.diff.d_action, 2 * cfg.diff.d_cond}
        .init(p.params, rng);
  } else {
    Denoiser{"denoiser", cfg.diff, cfg.cond_width()}.init(p.params, rng);
  }
  return p;
}

Tensor Policy::encode_cond(const WindowObs& window) const {
  Tape t;
  WindowOutput out = FusionBackbone{"backbone", cfg.backbone}.forward_window(t, params, window);
  const Tensor& fused = t.val(out.fused);
  return Tensor({1, fused.size()}, fused.data);
}

Var Policy::loss_graph(Tape& t, const ParamStore& ps, const WindowObs& window,
                       const Tensor& chunk_norm, size_t step, const Tensor& eps) const {
  WindowOutput out = FusionBackbone{"backbone", cfg.backbone}.forward_window(t, ps, window);
  Var cond = t.reshape(out.fused, {1, cfg.cond_width()});
  const Tensor y_s = forward_noise(chunk_norm, step, eps, schedule);
  Var eps_hat = Denoiser{"denoiser", cfg.diff, cfg.cond_width()}.forward(
      t, ps, t.constant(y_s, "y_noisy"), step, cond);
  return eps_mse(t, eps_hat, eps);
}

Var Policy::bc_loss_graph(Tape& t, const ParamStore& ps, const WindowObs& window,
                          const Tensor& chunk_norm) const {
  WindowOutput out = FusionBackbone{"backbone", cfg.backbone}.forward_window(t, ps, window);
  Var cond = t.reshape(out.fused, {1, cfg.cond_width()});
  return BcRegressor{"bc", cfg.cond_width(), cfg.diff.t_horizon, cfg.diff.d_action,
                     2 * cfg.diff.d_cond}
      .loss(t, ps, cond, chunk_norm);
}

Tensor Policy::sample_chunk_norm(const WindowObs& window, Rng& rng,
                                 size_t n_infer_override) const {
  const Tensor cond = encode_cond(window);
  if (cfg.objective == "bc") {
    Tape t;
    Var pred = BcRegressor{"bc", cfg.cond_width(), cfg.diff.t_horizon, cfg.diff.d_action,
                           2 * cfg.diff.d_cond}
                   .predict(t, params, t.constant(cond));
    return t.val(pred);
  }
  const Denoiser den{"denoiser", cfg.diff, cfg.cond_width()};
  DenoiseFn fn = [&](const Tensor& y, size_t s) {
    Tape t;
    return t.val(den.forward(t, params, t.constant(y, "y_rev"), s, t.constant(cond, "cond")));
  };
  const size_t n_infer = n_infer_override ? n_infer_override : cfg.diff.n_infer;
  return sample_chunk(fn, schedule, n_infer, cfg.diff.t_horizon, cfg.diff.d_action, rng);
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

namespace {

json backbone_to_json(const BackboneConfig& b) {
  return json{{"variant", b.variant},
              {"d_model", b.att.d_model},
              {"d_att", b.att.d_att},
              {"n_sub", b.att.n_sub},
              {"patch_h", b.att.patch_h},
              {"patch_w", b.att.patch_w},
              {"eps_ot", b.att.eps_ot},
              {"n_ot", b.att.n_ot},
              {"att_heads", b.att.n_heads},
              {"d_force", b.d_force},
              {"d_pose", b.d_pose},
              {"t_window", b.t_window},
              {"img_h", b.img_h},
              {"img_w", b.img_w},
              {"patch", b.patch},
              {"tf_heads", b.tf_heads},
              {"tf_layers", b.tf_layers},
              {"d_ff", b.d_ff},
              {"d_forcefeat", b.d_forcefeat},
              {"mask_force", b.mask_force},
              {"mask_pose", b.mask_pose},
              {"time_encoding", b.time_encoding}};
}

BackboneConfig backbone_from_json(const json& j) {
  BackboneConfig b;
  b.variant = j.at("variant").get<std::string>();
  b.att.d_model = j.at("d_model").get<size_t>();
  b.att.d_att = j.at("d_att").get<size_t>();
  b.att.n_sub = j.at("n_sub").get<size_t>();
  b.att.patch_h = j.at("patch_h").get<size_t>();
  b.att.patch_w = j.at("patch_w").get<size_t>();
  b.att.eps_ot = j.at("eps_ot").get<double>();
  b.att.n_ot = j.at("n_ot").get<size_t>();
  b.att.n_heads = j.at("att_heads").get<size_t>();
  b.d_force = j.at("d_force").get<size_t>();
  b.d_pose = j.at("d_pose").get<size_t>();
  b.t_window = j.at("t_window").get<size_t>();
  b.img_h = j.at("img_h").get<size_t>();
  b.img_w = j.at("img_w").get<size_t>();
  b.patch = j.at("patch").get<size_t>();
  b.tf_heads = j.at("tf_heads").get<size_t>();
  b.tf_layers = j.at("tf_layers").get<size_t>();
  b.d_ff = j.at("d_ff").get<size_t>();
  b.d_forcefeat = j.at("d_forcefeat").get<size_t>();
  b.mask_force = j.at("mask_force").get<bool>();
  b.mask_pose = j.at("mask_pose").get<bool>();
  b.time_encoding = j.at("time_encoding").get<bool>();
  return b;
}

json diff_to_json(const DiffusionConfig& d) {
  return json{{"n_diff", d.n_diff},   {"n_infer", d.n_infer}, {"t_horizon", d.t_horizon},
              {"d_action", d.d_action}, {"w1", d.w1},         {"w2", d.w2},
              {"w3", d.w3},           {"d_cond", d.d_cond},   {"d_step", d.d_step},
              {"exec_prefix", d.exec_prefix}};
}

DiffusionConfig diff_from_json(const json& j) {
  DiffusionConfig d;
  d.n_diff = j.at("n_diff").get<size_t>();
  d.n_infer = j.at("n_infer").get<size_t>();
  d.t_horizon = j.at("t_horizon").get<size_t>();
  d.d_action = j.at("d_action").get<size_t>();
  d.w1 = j.at("w1").get<size_t>();
  d.w2 = j.at("w2").get<size_t>();
  d.w3 = j.at("w3").get<size_t>();
  d.d_cond = j.at("d_cond").get<size_t>();
  d.d_step = j.at("d_step").get<size_t>();
  d.exec_prefix = j.at("exec_prefix").get<size_t>();
  return d;
}

json stats_to_json(const pipe::NormStats& s) {
  return json{{"force_min", s.force_min.data},   {"force_max", s.force_max.data},
              {"pose_min", s.pose_min.data},     {"pose_max", s.pose_max.data},
              {"action_min", s.action_min.data}, {"action_max", s.action_max.data}};
}

pipe::NormStats stats_from_json(const json& j) {
  auto ten = [&](const char* k, size_t n) {
    auto v = j.at(k).get<std::vector<double>>();
    if (v.size() != n) throw DataError("bad stats width in policy sidecar");
    return Tensor({n}, std::move(v));
  };
  pipe::NormStats s;
  s.force_min = ten("force_min", 9);
  s.force_max = ten("force_max", 9);
  s.pose_min = ten("pose_min", 10);
  s.pose_max = ten("pose_max", 10);
  s.action_min = ten("action_min", 3);
  s.action_max = ten("action_max", 3);
  return s;
}

}  // namespace

void Policy::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  params.save(dir + "/params.bin");
  json j;
  j["format"] = "sota-policy";
  j["version"] = 1;
  j["objective"] = cfg.objective;
  j["backbone"] = backbone_to_json(cfg.backbone);
  j["diffusion"] = diff_to_json(cfg.diff);
  j["stats"] = stats_to_json(stats);
  j["init_seed"] = params.init_seed;
  write_text_file(dir + "/policy.json", j.dump(2) + "\n");
}

Policy Policy::load(const std::string& dir) {
  json j;
  try {
    j = json::parse(read_text_file(dir + "/policy.json"));
  } catch (const json::exception& e) {
    throw DataError("cannot parse policy sidecar: " + std::string(e.what()));
  }
  if (j.value("format", "") != "sota-policy") throw DataError("not a policy checkpoint: " + dir);
  Policy p;
  p.cfg.objective = j.at("objective").get<std::string>();
  p.cfg.backbone = backbone_from_json(j.at("backbone"));
  p.cfg.diff = diff_from_json(j.at("diffusion"));
  p.cfg.validate();
  p.schedule = NoiseSchedule::squared_cosine(p.cfg.diff.n_diff);
  p.stats = stats_from_json(j.at("stats"));
  p.params = ParamStore::load(dir + "/params.bin");
  p.params.init_seed = j.value("init_seed", 0ull);

  // checkpoint/config consistency: rebuild a fresh skeleton and compare names
  Policy skeleton = Policy::create(p.cfg, p.stats, 0);
  if (skeleton.params.params.size() != p.params.params.size())
    throw DataError("checkpoint/config mismatch: parameter count differs");
  for (const auto& [name, t] : skeleton.params.params) {
    if (!p.params.has(name) || p.params.at(name).shape != t.shape)
      throw DataError("checkpoint/config mismatch at parameter " + name);
  }
  return p;
}

// ---------------------------------------------------------------------------
// controller
// ---------------------------------------------------------------------------

Controller::Controller(const Policy& policy, Rng rng) : policy_(policy), rng_(rng) {}

void Controller::reset(Rng rng) {
  rng_ = rng;
  buffer_.clear();
  plan_.clear();
  plan_pos_ = 0;
  plans_made_ = 0;
}

Tensor Controller::step(const FrameObs& obs) {
  const size_t t_w = policy_.cfg.backbone.t_window;
  buffer_.push_back(obs);
  while (buffer_.size() > t_w) buffer_.pop_front();
  if (buffer_.empty()) throw DataError("controller stepped with no observation");

  if (plan_.empty() || plan_pos_ >= std::min(policy_.cfg.diff.exec_prefix, plan_.size())) {
    WindowObs window;
    // repeat-first padding when the episode is younger than the window
    for (size_t i = buffer_.size(); i < t_w; ++i) window.push_back(buffer_.front());
    for (const auto& f : buffer_) window.push_back(f);
    const Tensor chunk = policy_.sample_chunk_norm(window, rng_);
    plan_.clear();
    for (size_t i = 0; i < chunk.rows(); ++i) {
      Tensor row = Tensor::zeros({chunk.cols()});
      for (size_t j = 0; j < chunk.cols(); ++j) row.data[j] = chunk(i, j);
      plan_.push_back(pipe::action_denormalize(row, policy_.stats));
    }
    plan_pos_ = 0;
    ++plans_made_;
  }
  return plan_[plan_pos_++];
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

TrainResult train_policy(Policy& policy, const pipe::Dataset& ds, const TrainConfig& tc,
                         const std::string& loss_csv_path) {
  if (ds.episodes.empty()) throw DataError("training on an empty dataset");
  struct PairIdx {
    size_t ep, t;
  };
  std::vector<PairIdx> pairs;
  for (size_t e = 0; e < ds.episodes.size(); ++e)
    for (size_t t = 0; t < pipe::pair_count(ds.episodes[e].length); ++t) pairs.push_back({e, t});

  const size_t steps_per_epoch = (tc.samples_per_epoch + tc.batch - 1) / tc.batch;
  const size_t total_steps = tc.epochs * steps_per_epoch;
  nn::AdamW opt;
  opt.lr = tc.lr;
  opt.weight_decay = tc.weight_decay;
  nn::Ema ema;
  ema.decay = tc.ema_decay;

  Rng master(tc.seed);
  Rng pick_rng = master.sub("train/pick");

  TrainResult result;
  std::ofstream csv;
  if (!loss_csv_path.empty()) {
    csv.open(loss_csv_path);
    if (!csv) throw DataError("cannot write " + loss_csv_path);
    csv << "epoch,loss,lr\n";
  }

  const size_t t_w = policy.cfg.backbone.t_window;
  const size_t t_h = policy.cfg.diff.t_horizon;
  size_t global_step = 0;

  for (size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    double epoch_loss = 0.0;
    size_t epoch_samples = 0;
    double lr_now = 0.0;
    for (size_t step = 0; step < steps_per_epoch; ++step) {
      std::vector<PairIdx> batch(tc.batch);
      for (auto& b : batch) b = pairs[pick_rng.uniform_int(pairs.size())];

      const size_t workers = std::max<size_t>(1, tc.threads);
      std::vector<GradMap> sinks(workers);
      std::vector<double> losses(tc.batch, 0.0);
      parallel_for_workers(tc.batch, workers, [&](size_t i, size_t w) {
        const PairIdx& pi = batch[i];
        const pipe::Episode& ep = ds.episodes[pi.ep];
        WindowObs window = pipe::make_window(ep, pi.t, t_w, ds.stats);
        Tensor chunk = pipe::make_chunk(ep, pi.t, t_h, ds.stats);
        Rng sample_rng = master.sub("train/sample", global_step * tc.batch + i);
        Tape tape;
        Var loss{};
        if (policy.cfg.objective == "bc") {
          loss = policy.bc_loss_graph(tape, policy.params, window, chunk);
        } else {
          const size_t s = 1 + sample_rng.uniform_int(policy.cfg.diff.n_diff);
          Tensor eps = Tensor::zeros(chunk.shape);
          for (auto& v : eps.data) v = sample_rng.normal();
          loss = policy.loss_graph(tape, policy.params, window, chunk, s, eps);
        }
        losses[i] = tape.val(loss).data[0];
        tape.backward_scalar(loss, sinks[w]);
      });

      policy.params.zero_grads();
      for (const GradMap& sink : sinks) policy.params.accumulate(sink);
      const double inv_batch = 1.0 / static_cast<double>(tc.batch);
      for (auto& [name, g] : policy.params.grads)
        for (auto& v : g.data) v *= inv_batch;

      lr_now = nn::cosine_warmup_lr(tc.lr, global_step, total_steps, tc.warmup_frac);
      opt.step(policy.params, lr_now);
      if (tc.ema) ema.update(policy.params);

      for (double l : losses) {
        if (!std::isfinite(l)) throw NumericError("non-finite training loss");
        epoch_loss += l;
      }
      epoch_samples += tc.batch;
      ++global_step;
    }
    epoch_loss /= static_cast<double>(epoch_samples);
    result.epoch_loss.push_back(epoch_loss);
    result.epoch_lr.push_back(lr_now);
    if (csv.is_open()) csv << epoch << "," << epoch_loss << "," << lr_now << "\n";
  }

  if (tc.ema && ema.initialized) policy.params.params = ema.shadow.params;
  result.final_loss = result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back();
  return result;
}

}  // namespace sota
