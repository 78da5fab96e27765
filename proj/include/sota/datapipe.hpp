// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sota/backbone.hpp"
#include "sota/tensor.hpp"

namespace sota::pipe {

// One recorded demonstration. Streams are aligned to a common 10 Hz
// clock; images are stored as packed u8 RGB.
struct Episode {
  size_t length = 0;
  size_t img_h = 56;
  size_t img_w = 56;
  std::vector<uint8_t> images;  // length * H * W * 3
  Tensor wrench;       // [T, 6] tool-frame (fx, fy, fz, tx, ty, tz)
  Tensor grip_force;   // [T] gripper force scalar
  Tensor pose;         // [T, 4] (x, y, z, theta)
  Tensor grip_pos;     // [T] gripper position
  Tensor timestamps;   // [T] seconds
  bool success = false;
  uint64_t seed = 0;
  std::string perturb_tag;

  void validate() const;
};

// Per-channel min/max fitted on the training split. Force and pose
// cover the observation layouts; action channels cover the pose-increment
// chunks the diffusion head is trained on.
struct NormStats {
  Tensor force_min, force_max;    // [9]
  Tensor pose_min, pose_max;      // [10]
  Tensor action_min, action_max;  // [3]
};

struct Dataset {
  std::vector<Episode> episodes;
  NormStats stats;
  uint64_t config_hash = 0;

  size_t total_steps() const;
};

// --- scale stabilization -----------------------------------------------

// 6-wrench + gripper scalar -> 9 channels:
// [|f|, f_hat(3), |tau|, tau_hat(3), grip]; zero vectors keep direction 0.
Tensor split_wrench(const Tensor& wrench6, double grip_force);

// inverse helper for round-trip checks: magnitude * direction
Tensor merge_wrench(const Tensor& split9);

// first two columns of R / Gram-Schmidt reconstruction
Tensor rot_to_6d(const Tensor& rot3x3);
Tensor rot_from_6d(const Tensor& v6);

Tensor rot_y(double theta);  // planar tilt as a rotation about the y axis

double wrap_angle(double a);  // into (-pi, pi]

// frame-to-frame increments of [T,4] (x,y,z,theta) poses; first row zero,
// angle differences wrapped
Tensor pose_increments(const Tensor& poses);

// --- normalization -------------------------------------------------------

// x_hat = (x - min) / (max - min); constant channels map to 0.5
Tensor minmax_apply(const Tensor& x, const Tensor& mn, const Tensor& mx);
Tensor minmax_invert(const Tensor& x_hat, const Tensor& mn, const Tensor& mx);

// actions live in [-1, 1] for the diffusion head
Tensor action_normalize(const Tensor& a, const NormStats& stats);
Tensor action_denormalize(const Tensor& a_norm, const NormStats& stats);

NormStats minmax_fit(const std::vector<Episode>& episodes);

// --- observation / chunk assembly ----------------------------------------

// raw (unnormalized) observation layouts
Tensor force_obs_raw(const Episode& ep, size_t t);   // [9]
Tensor pose_obs_raw(const Episode& ep, size_t t);    // [10] increments + 6D rot + grip
Tensor action_raw(const Episode& ep, size_t t);      // [3] (dx, dz, dtheta)
Tensor image_float01(const Episode& ep, size_t t);   // [H, W, 3]

FrameObs make_frame_obs(const Episode& ep, size_t t, const NormStats& stats);

// window covers t-T_w .. t-1 clamped to the episode start (repeat-first);
// chunk covers t .. t+T_h-1 clamped to the episode end (repeat-last)
std::vector<size_t> window_indices(size_t t, size_t len, size_t t_w);
std::vector<size_t> chunk_indices(size_t t, size_t len, size_t t_h);

// one (window, chunk) pair per timestep
size_t pair_count(size_t episode_len);

WindowObs make_window(const Episode& ep, size_t t, size_t t_w, const NormStats& stats);
Tensor make_chunk(const Episode& ep, size_t t, size_t t_h, const NormStats& stats);  // [T_h,3]

// --- persistence -----------------------------------------------------------

// Archive layout: <dir>/manifest.json plus one binary blob per episode
// (little-endian f32 arrays, zlib-compressed u8 image block, crc32 in
// the manifest).
void dataset_write(const Dataset& ds, const std::string& dir);
Dataset dataset_read(const std::string& dir);

}  // namespace sota::pipe
