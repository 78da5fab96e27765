// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "sota/datapipe.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "sota/util.hpp"

namespace sota::pipe {

namespace fs = std::filesystem;
using nlohmann::json;

void Episode::validate() const {
  if (length == 0) throw DataError("empty episode");
  if (images.size() != length * img_h * img_w * 3) throw DataError("image buffer size mismatch");
  require_shape(wrench, {length, 6}, "episode wrench");
  require_shape(pose, {length, 4}, "episode pose");
  require_shape(grip_force, {length}, "episode grip force");
  require_shape(grip_pos, {length}, "episode grip position");
  require_shape(timestamps, {length}, "episode timestamps");
  for (size_t t = 1; t < length; ++t)
    if (!(timestamps.data[t] > timestamps.data[t - 1]))
      throw DataError("timestamps must be strictly increasing");
}

size_t Dataset::total_steps() const {
  size_t n = 0;
  for (const auto& ep : episodes) n += ep.length;
  return n;
}

// ---------------------------------------------------------------------------
// scale stabilization
// ---------------------------------------------------------------------------

namespace {
void mag_dir(const double* v, double* out_mag, double* out_dir) {
  const double m = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  *out_mag = m;
  if (m > 0.0) {
    out_dir[0] = v[0] / m;
    out_dir[1] = v[1] / m;
    out_dir[2] = v[2] / m;
  } else {
    out_dir[0] = out_dir[1] = out_dir[2] = 0.0;
  }
}
}  // namespace

Tensor split_wrench(const Tensor& wrench6, double grip_force) {
  require_shape(wrench6, {6}, "wrench");
  Tensor out = Tensor::zeros({9});
  mag_dir(wrench6.data.data(), &out.data[0], &out.data[1]);
  mag_dir(wrench6.data.data() + 3, &out.data[4], &out.data[5]);
  out.data[8] = grip_force;
  return out;
}

Tensor merge_wrench(const Tensor& split9) {
  require_shape(split9, {9}, "split wrench");
  Tensor out = Tensor::zeros({6});
  for (size_t i = 0; i < 3; ++i) {
    out.data[i] = split9.data[0] * split9.data[1 + i];
    out.data[3 + i] = split9.data[4] * split9.data[5 + i];
  }
  return out;
}

Tensor rot_to_6d(const Tensor& rot3x3) {
  require_shape(rot3x3, {3, 3}, "rotation");
  Tensor out = Tensor::zeros({6});
  for (size_t i = 0; i < 3; ++i) {
    out.data[i] = rot3x3(i, 0);
    out.data[3 + i] = rot3x3(i, 1);
  }
  return out;
}

Tensor rot_from_6d(const Tensor& v6) {
  require_shape(v6, {6}, "6d rotation");
  double a[3] = {v6.data[0], v6.data[1], v6.data[2]};
  double b[3] = {v6.data[3], v6.data[4], v6.data[5]};
  const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  if (na < 1e-12) throw NumericError("degenerate 6D rotation: zero first column");
  for (double& v : a) v /= na;
  const double d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  for (size_t i = 0; i < 3; ++i) b[i] -= d * a[i];
  const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
  if (nb < 1e-12) throw NumericError("degenerate 6D rotation: collinear columns");
  for (double& v : b) v /= nb;
  const double c[3] = {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                       a[0] * b[1] - a[1] * b[0]};
  Tensor r = Tensor::zeros({3, 3});
  for (size_t i = 0; i < 3; ++i) {
    r(i, 0) = a[i];
    r(i, 1) = b[i];
    r(i, 2) = c[i];
  }
  return r;
}

Tensor rot_y(double theta) {
  Tensor r = Tensor::identity(3);
  const double c = std::cos(theta), s = std::sin(theta);
  r(0, 0) = c;
  r(0, 2) = s;
  r(2, 0) = -s;
  r(2, 2) = c;
  return r;
}

double wrap_angle(double a) {
  const double two_pi = 6.283185307179586476925286766559;
  a = std::fmod(a, two_pi);
  if (a <= -3.14159265358979323846) a += two_pi;
  if (a > 3.14159265358979323846) a -= two_pi;
  return a;
}

Tensor pose_increments(const Tensor& poses) {
  if (poses.rank() != 2 || poses.cols() != 4)
    throw NumericError("pose_increments expects [T,4]");
  const size_t n = poses.rows();
  if (n < 1) throw DataError("pose_increments on empty sequence");
  Tensor out = Tensor::zeros({n, 4});
  for (size_t t = 1; t < n; ++t) {
    for (size_t j = 0; j < 3; ++j) out(t, j) = poses(t, j) - poses(t - 1, j);
    out(t, 3) = wrap_angle(poses(t, 3) - poses(t - 1, 3));
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

Tensor minmax_apply(const Tensor& x, const Tensor& mn, const Tensor& mx) {
  if (!x.same_shape(mn) || !x.same_shape(mx))
    throw NumericError("minmax stats shape mismatch");
  Tensor out = x;
  for (size_t i = 0; i < x.size(); ++i) {
    const double range = mx.data[i] - mn.data[i];
    out.data[i] = range > 0.0 ? (x.data[i] - mn.data[i]) / range : 0.5;
  }
  return out;
}

Tensor minmax_invert(const Tensor& x_hat, const Tensor& mn, const Tensor& mx) {
  if (!x_hat.same_shape(mn) || !x_hat.same_shape(mx))
    throw NumericError("minmax stats shape mismatch");
  Tensor out = x_hat;
  for (size_t i = 0; i < out.size(); ++i) {
    const double range = mx.data[i] - mn.data[i];
    out.data[i] = range > 0.0 ? x_hat.data[i] * range + mn.data[i] : mn.data[i];
  }
  return out;
}

Tensor action_normalize(const Tensor& a, const NormStats& stats) {
  Tensor n = minmax_apply(a, stats.action_min, stats.action_max);
  for (auto& v : n.data) v = 2.0 * v - 1.0;
  return n;
}

Tensor action_denormalize(const Tensor& a_norm, const NormStats& stats) {
  Tensor h = a_norm;
  for (auto& v : h.data) v = 0.5 * (v + 1.0);
  return minmax_invert(h, stats.action_min, stats.action_max);
}

NormStats minmax_fit(const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw DataError("minmax_fit on an empty dataset");
  NormStats s;
  s.force_min = Tensor::full({9}, 1e300);
  s.force_max = Tensor::full({9}, -1e300);
  s.pose_min = Tensor::full({10}, 1e300);
  s.pose_max = Tensor::full({10}, -1e300);
  s.action_min = Tensor::full({3}, 1e300);
  s.action_max = Tensor::full({3}, -1e300);
  auto fold = [](Tensor& mn, Tensor& mx, const Tensor& x) {
    for (size_t i = 0; i < x.size(); ++i) {
      mn.data[i] = std::min(mn.data[i], x.data[i]);
      mx.data[i] = std::max(mx.data[i], x.data[i]);
    }
  };
  for (const Episode& ep : episodes) {
    for (size_t t = 0; t < ep.length; ++t) {
      fold(s.force_min, s.force_max, force_obs_raw(ep, t));
      fold(s.pose_min, s.pose_max, pose_obs_raw(ep, t));
      fold(s.action_min, s.action_max, action_raw(ep, t));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// observation / chunk assembly
// ---------------------------------------------------------------------------

Tensor force_obs_raw(const Episode& ep, size_t t) {
  Tensor w = Tensor::zeros({6});
  for (size_t j = 0; j < 6; ++j) w.data[j] = ep.wrench(t, j);
  return split_wrench(w, ep.grip_force.data[t]);
}

Tensor pose_obs_raw(const Episode& ep, size_t t) {
  Tensor out = Tensor::zeros({10});
  double dtheta = 0.0;
  if (t > 0) {
    for (size_t j = 0; j < 3; ++j) out.data[j] = ep.pose(t, j) - ep.pose(t - 1, j);
    dtheta = wrap_angle(ep.pose(t, 3) - ep.pose(t - 1, 3));
  }
  const Tensor r6 = rot_to_6d(rot_y(dtheta));
  for (size_t j = 0; j < 6; ++j) out.data[3 + j] = r6.data[j];
  out.data[9] = ep.grip_pos.data[t];
  return out;
}

Tensor action_raw(const Episode& ep, size_t t) {
  Tensor a = Tensor::zeros({3});
  if (t + 1 < ep.length) {
    a.data[0] = ep.pose(t + 1, 0) - ep.pose(t, 0);
    a.data[1] = ep.pose(t + 1, 2) - ep.pose(t, 2);
    a.data[2] = wrap_angle(ep.pose(t + 1, 3) - ep.pose(t, 3));
  }
  return a;
}

Tensor image_float01(const Episode& ep, size_t t) {
  Tensor img = Tensor::zeros({ep.img_h, ep.img_w, 3});
  const uint8_t* src = ep.images.data() + t * ep.img_h * ep.img_w * 3;
  for (size_t i = 0; i < img.size(); ++i)
    img.data[i] = static_cast<double>(src[i]) / 255.0;
  return img;
}

FrameObs make_frame_obs(const Episode& ep, size_t t, const NormStats& stats) {
  FrameObs f;
  f.image = image_float01(ep, t);
  f.force = minmax_apply(force_obs_raw(ep, t), stats.force_min, stats.force_max);
  f.pose = minmax_apply(pose_obs_raw(ep, t), stats.pose_min, stats.pose_max);
  return f;
}

std::vector<size_t> window_indices(size_t t, size_t len, size_t t_w) {
  if (len == 0) throw DataError("windowize on an empty episode");
  std::vector<size_t> idx(t_w);
  for (size_t i = 0; i < t_w; ++i) {
    const long j = static_cast<long>(t) - static_cast<long>(t_w) + static_cast<long>(i);
    idx[i] = static_cast<size_t>(std::max(0L, j));
  }
  return idx;
}

std::vector<size_t> chunk_indices(size_t t, size_t len, size_t t_h) {
  if (len == 0) throw DataError("windowize on an empty episode");
  std::vector<size_t> idx(t_h);
  for (size_t i = 0; i < t_h; ++i) idx[i] = std::min(t + i, len - 1);
  return idx;
}

size_t pair_count(size_t episode_len) { return episode_len; }

WindowObs make_window(const Episode& ep, size_t t, size_t t_w, const NormStats& stats) {
  WindowObs w;
  for (size_t j : window_indices(t, ep.length, t_w)) w.push_back(make_frame_obs(ep, j, stats));
  return w;
}

Tensor make_chunk(const Episode& ep, size_t t, size_t t_h, const NormStats& stats) {
  Tensor chunk = Tensor::zeros({t_h, 3});
  const auto idx = chunk_indices(t, ep.length, t_h);
  for (size_t i = 0; i < t_h; ++i) {
    const Tensor a = action_normalize(action_raw(ep, idx[i]), stats);
    for (size_t j = 0; j < 3; ++j) chunk(i, j) = a.data[j];
  }
  return chunk;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

namespace {

constexpr uint32_t kArchiveVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32_array(std::string& out, const Tensor& t) {
  for (double d : t.data) {
    const float f = static_cast<float>(d);
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
  }
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  uint32_t u32() {
    if (pos + 4 > buf.size()) throw DataError("truncated episode blob");
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(buf[pos + i]);
    pos += 4;
    return v;
  }
  void f32_array(Tensor& t) {
    for (auto& d : t.data) {
      uint32_t v = u32();
      float f;
      std::memcpy(&f, &v, 4);
      d = static_cast<double>(f);
    }
  }
};

std::string episode_blob(const Episode& ep) {
  std::string out;
  out += "SOTE";
  put_u32(out, kArchiveVersion);
  put_u32(out, static_cast<uint32_t>(ep.length));
  put_u32(out, static_cast<uint32_t>(ep.img_h));
  put_u32(out, static_cast<uint32_t>(ep.img_w));
  put_f32_array(out, ep.wrench);
  put_f32_array(out, ep.grip_force);
  put_f32_array(out, ep.pose);
  put_f32_array(out, ep.grip_pos);
  put_f32_array(out, ep.timestamps);

  uLongf bound = compressBound(static_cast<uLong>(ep.images.size()));
  std::vector<Bytef> comp(bound);
  if (compress2(comp.data(), &bound, ep.images.data(), static_cast<uLong>(ep.images.size()), 6) !=
      Z_OK)
    throw DataError("zlib compression failed");
  put_u32(out, static_cast<uint32_t>(ep.images.size()));
  put_u32(out, static_cast<uint32_t>(bound));
  out.append(reinterpret_cast<const char*>(comp.data()), bound);
  return out;
}

Episode episode_from_blob(const std::string& buf) {
  Reader r{buf};
  if (buf.size() < 4 || buf.substr(0, 4) != "SOTE") throw DataError("bad episode magic");
  r.pos = 4;
  const uint32_t version = r.u32();
  if (version != kArchiveVersion)
    throw DataError("unsupported episode version " + std::to_string(version));
  Episode ep;
  ep.length = r.u32();
  ep.img_h = r.u32();
  ep.img_w = r.u32();
  ep.wrench = Tensor::zeros({ep.length, 6});
  ep.grip_force = Tensor::zeros({ep.length});
  ep.pose = Tensor::zeros({ep.length, 4});
  ep.grip_pos = Tensor::zeros({ep.length});
  ep.timestamps = Tensor::zeros({ep.length});
  r.f32_array(ep.wrench);
  r.f32_array(ep.grip_force);
  r.f32_array(ep.pose);
  r.f32_array(ep.grip_pos);
  r.f32_array(ep.timestamps);
  const uint32_t raw_size = r.u32();
  const uint32_t comp_size = r.u32();
  if (r.pos + comp_size > buf.size()) throw DataError("truncated episode blob");
  ep.images.resize(raw_size);
  uLongf dest = raw_size;
  if (uncompress(ep.images.data(), &dest, reinterpret_cast<const Bytef*>(buf.data() + r.pos),
                 comp_size) != Z_OK ||
      dest != raw_size)
    throw DataError("zlib decompression failed");
  return ep;
}

json stats_to_json(const NormStats& s) {
  auto vec = [](const Tensor& t) { return t.data; };
  return json{{"force_min", vec(s.force_min)}, {"force_max", vec(s.force_max)},
              {"pose_min", vec(s.pose_min)},   {"pose_max", vec(s.pose_max)},
              {"action_min", vec(s.action_min)}, {"action_max", vec(s.action_max)}};
}

NormStats stats_from_json(const json& j) {
  auto ten = [&](const char* k, size_t n) {
    std::vector<double> v = j.at(k).get<std::vector<double>>();
    if (v.size() != n) throw DataError("bad stats width in manifest");
    return Tensor({n}, std::move(v));
  };
  NormStats s;
  s.force_min = ten("force_min", 9);
  s.force_max = ten("force_max", 9);
  s.pose_min = ten("pose_min", 10);
  s.pose_max = ten("pose_max", 10);
  s.action_min = ten("action_min", 3);
  s.action_max = ten("action_max", 3);
  return s;
}

uint32_t crc_of(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<uint32_t>(
      crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

void dataset_write(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "sota-dataset";
  manifest["version"] = kArchiveVersion;
  manifest["config_hash"] = hex64(ds.config_hash);
  manifest["episodes"] = json::array();
  manifest["stats"] = stats_to_json(ds.stats);
  size_t steps = 0;
  for (size_t i = 0; i < ds.episodes.size(); ++i) {
    const Episode& ep = ds.episodes[i];
    ep.validate();
    char name[32];
    std::snprintf(name, sizeof(name), "ep_%05zu.bin", i);
    const std::string blob = episode_blob(ep);
    write_text_file(dir + "/" + name, blob);
    manifest["episodes"].push_back({{"file", name},
                                    {"length", ep.length},
                                    {"success", ep.success},
                                    {"seed", ep.seed},
                                    {"perturb", ep.perturb_tag},
                                    {"crc32", crc_of(blob)}});
    steps += ep.length;
  }
  manifest["episode_count"] = ds.episodes.size();
  manifest["step_count"] = steps;
  write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

Dataset dataset_read(const std::string& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(dir + "/manifest.json"));
  } catch (const json::exception& e) {
    throw DataError("cannot parse manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "sota-dataset")
    throw DataError("not a dataset archive: " + dir);
  if (manifest.value("version", 0) != static_cast<int>(kArchiveVersion))
    throw DataError("unsupported dataset version in " + dir);

  Dataset ds;
  ds.config_hash = std::stoull(manifest.value("config_hash", "0"), nullptr, 16);
  ds.stats = stats_from_json(manifest.at("stats"));
  const auto& eps = manifest.at("episodes");
  ds.episodes.resize(eps.size());
  std::vector<std::string> files;
  std::vector<uint32_t> crcs;
  for (const auto& e : eps) {
    files.push_back(e.at("file").get<std::string>());
    crcs.push_back(e.at("crc32").get<uint32_t>());
  }
  parallel_for(eps.size(), 4, [&](size_t i) {
    const std::string blob = read_text_file(dir + "/" + files[i]);
    if (crc_of(blob) != crcs[i])
      throw DataError("checksum mismatch in " + files[i]);
    ds.episodes[i] = episode_from_blob(blob);
    const auto& meta = eps[i];
    ds.episodes[i].success = meta.at("success").get<bool>();
    ds.episodes[i].seed = meta.at("seed").get<uint64_t>();
    ds.episodes[i].perturb_tag = meta.at("perturb").get<std::string>();
    ds.episodes[i].validate();
  });
  return ds;
}

}  // namespace sota::pipe
