// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "sota/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sota/kernels.hpp"
#include "sota/util.hpp"

namespace sota {

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  if (params.count(name)) throw NumericError("duplicate parameter name: " + name);
  grads[name] = Tensor::zeros(init.shape);
  return params[name] = std::move(init);
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw NumericError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw NumericError("unknown parameter: " + name);
  return it->second;
}

Tensor& ParamStore::grad(const std::string& name) {
  auto it = grads.find(name);
  if (it == grads.end()) throw NumericError("unknown parameter: " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, g] : grads) std::fill(g.data.begin(), g.data.end(), 0.0);
}

void ParamStore::accumulate(const GradMap& other) {
  for (const auto& [name, g] : other) {
    Tensor& dst = grad(name);
    if (!dst.same_shape(g)) throw NumericError("gradient shape mismatch for " + name);
    kern::add(dst.data.data(), dst.data.data(), g.data.data(), g.size());
  }
}

size_t ParamStore::scalar_count() const {
  size_t n = 0;
  for (const auto& [name, p] : params) n += p.size();
  return n;
}

uint64_t ParamStore::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, p] : params) {
    h = fnv1a(name, h);
    h = fnv1a(p.data.data(), p.data.size() * sizeof(double), h);
  }
  return h;
}

namespace {

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;
  uint32_t u32() {
    if (pos + 4 > buf.size()) throw DataError("truncated parameter file");
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(buf[pos + i]);
    pos += 4;
    return v;
  }
  float f32() {
    uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string bytes(size_t n) {
    if (pos + n > buf.size()) throw DataError("truncated parameter file");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void ParamStore::save(const std::string& path) const {
  std::string out;
  out += "SOTA";
  put_u32(out, 1u);
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(p.rank()));
    for (size_t d : p.shape) put_u32(out, static_cast<uint32_t>(d));
    for (double v : p.data) put_f32(out, static_cast<float>(v));
  }
  write_text_file(path, out);
}

ParamStore ParamStore::load(const std::string& path) {
  const std::string buf = read_text_file(path);
  ByteReader r{buf};
  if (r.bytes(4) != "SOTA") throw DataError("bad magic in parameter file " + path);
  const uint32_t version = r.u32();
  if (version != 1) throw DataError("unsupported parameter file version " + std::to_string(version));
  const uint32_t count = r.u32();
  ParamStore store;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const uint32_t rank = r.u32();
    std::vector<size_t> shape(rank);
    size_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = r.u32();
      n *= shape[d];
    }
    Tensor t = Tensor::zeros(shape);
    for (size_t j = 0; j < n; ++j) t.data[j] = static_cast<double>(r.f32());
    store.add(name, std::move(t));
  }
  if (r.pos != buf.size()) throw DataError("trailing bytes in parameter file " + path);
  return store;
}

// ---------------------------------------------------------------------------
// GradAcc
// ---------------------------------------------------------------------------

void GradAcc::add(int id, const Tensor& g) {
  auto i = static_cast<size_t>(id);
  if (!present_[i]) {
    slots_[i] = g;
    present_[i] = true;
    return;
  }
  if (!slots_[i].same_shape(g)) throw NumericError("gradient accumulation shape mismatch");
  kern::add(slots_[i].data.data(), slots_[i].data.data(), g.data.data(), g.size());
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

const Tensor& Var::val() const {
  if (!valid()) throw NumericError("val() on invalid Var");
  return tape->val(*this);
}

const Tensor& Tape::val(Var v) const {
  if (v.tape != this) throw NumericError("detached node: Var does not belong to this tape");
  return nodes_[static_cast<size_t>(v.id)].value;
}

int Tape::check_var(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<size_t>(v.id) >= nodes_.size())
    throw NumericError("detached node: Var does not belong to this tape");
  return v.id;
}

Var Tape::emit(const std::string& op, std::vector<int> inputs, Tensor value, BackwardFn backward,
               bool needs_grad) {
  if (check_finite && !value.finite())
    throw NumericError("non-finite value produced by op '" + op + "'");
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.backward = std::move(backward);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::clear() {
  nodes_.clear();
  backward_done_ = false;
}

Var Tape::constant(Tensor v, const std::string& op) {
  return emit(op, {}, std::move(v), nullptr, false);
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  Var v = emit("param", {}, store.at(name), nullptr, true);
  nodes_.back().param_name = name;
  return v;
}

#define SOTA_INPUT_GRADS(...)                                            \
  const bool needs = [&] {                                               \
    for (int i : {__VA_ARGS__})                                          \
      if (nodes_[static_cast<size_t>(i)].needs_grad) return true;        \
    return false;                                                        \
  }()

Var Tape::add(Var a, Var b) {
  const int ia = check_var(a), ib = check_var(b);
  const Tensor& ta = in(ia);
  const Tensor& tb = in(ib);
  if (!ta.same_shape(tb))
    throw NumericError("add shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out = Tensor::zeros(ta.shape);
  kern::add(out.data.data(), ta.data.data(), tb.data.data(), out.size());
  SOTA_INPUT_GRADS(ia, ib);
  return emit("add", {ia, ib}, std::move(out),
              [ia, ib](Tape& t, const Tensor& g, GradAcc& acc) {
                if (t.nodes_[ia].needs_grad) acc.add(ia, g);
                if (t.nodes_[ib].needs_grad) acc.add(ib, g);
              },
              needs);
}

Var Tape::sub(Var a, Var b) {
  const int ia = check_var(a), ib = check_var(b);
  const Tensor& ta = in(ia);
  const Tensor& tb = in(ib);
  if (!ta.same_shape(tb))
    throw NumericError("sub shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out = Tensor::zeros(ta.shape);
  kern::sub(out.data.data(), ta.data.data(), tb.data.data(), out.size());
  SOTA_INPUT_GRADS(ia, ib);
  return emit("sub", {ia, ib}, std::move(out),
              [ia, ib](Tape& t, const Tensor& g, GradAcc& acc) {
                if (t.nodes_[ia].needs_grad) acc.add(ia, g);
                if (t.nodes_[ib].needs_grad) {
                  Tensor ng = Tensor::zeros(g.shape);
                  kern::scale(ng.data.data(), g.data.data(), -1.0, g.size());
                  acc.add(ib, ng);
                }
              },
              needs);
}

Var Tape::mul(Var a, Var b) {
  const int ia = check_var(a), ib = check_var(b);
  const Tensor& ta = in(ia);
  const Tensor& tb = in(ib);
  if (!ta.same_shape(tb))
    throw NumericError("mul shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out = Tensor::zeros(ta.shape);
  kern::mul(out.data.data(), ta.data.data(), tb.data.data(), out.size());
  SOTA_INPUT_GRADS(ia, ib);
  return emit("mul", {ia, ib}, std::move(out),
              [ia, ib](Tape& t, const Tensor& g, GradAcc& acc) {
                if (t.nodes_[ia].needs_grad) {
                  Tensor ga = Tensor::zeros(g.shape);
                  kern::mul(ga.data.data(), g.data.data(), t.in(ib).data.data(), g.size());
                  acc.add(ia, ga);
                }
                if (t.nodes_[ib].needs_grad) {
                  Tensor gb = Tensor::zeros(g.shape);
                  kern::mul(gb.data.data(), g.data.data(), t.in(ia).data.data(), g.size());
                  acc.add(ib, gb);
                }
              },
              needs);
}

Var Tape::div(Var a, Var b) {
  const int ia = check_var(a), ib = check_var(b);
  const Tensor& ta = in(ia);
  const Tensor& tb = in(ib);
  if (!ta.same_shape(tb))
    throw NumericError("div shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out = Tensor::zeros(ta.shape);
  for (size_t i = 0; i < out.size(); ++i) out.data[i] = ta.data[i] / tb.data[i];
  SOTA_INPUT_GRADS(ia, ib);
  const int iy = static_cast<int>(nodes_.size());  // id of the output node
  return emit("div", {ia, ib}, std::move(out),
              [ia, ib, iy](Tape& t, const Tensor& g, GradAcc& acc) {
                const Tensor& bval = t.in(ib);
                if (t.nodes_[ia].needs_grad) {
                  Tensor ga = Tensor::zeros(g.shape);
                  for (size_t i = 0; i < g.size(); ++i) ga.data[i] = g.data[i] / bval.data[i];
                  acc.add(ia, ga);
                }
                if (t.nodes_[ib].needs_grad) {
                  const Tensor& y = t.in(iy);
                  Tensor gb = Tensor::zeros(g.shape);
                  for (size_t i = 0; i < g.size(); ++i)
                    gb.data[i] = -g.data[i] * y.data[i] / bval.data[i];
                  acc.add(ib, gb);
                }
              },
              needs);
}

Var Tape::neg(Var a) { return scale(a, -1.0); }

Var Tape::scale(Var a, double s) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  Tensor out = Tensor::zeros(ta.shape);
  kern::scale(out.data.data(), ta.data.data(), s, out.size());
  SOTA_INPUT_GRADS(ia);
  return emit("scale", {ia}, std::move(out),
              [ia, s](Tape&, const Tensor& g, GradAcc& acc) {
                Tensor ga = Tensor::zeros(g.shape);
                kern::scale(ga.data.data(), g.data.data(), s, g.size());
                acc.add(ia, ga);
              },
              needs);
}

Var Tape::add_const(Var a, double c) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  Tensor out = ta;
  for (auto& v : out.data) v += c;
  SOTA_INPUT_GRADS(ia);
  return emit("add_const", {ia}, std::move(out),
              [ia](Tape&, const Tensor& g, GradAcc& acc) { acc.add(ia, g); }, needs);
}

Var Tape::exp(Var a) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  Tensor out = Tensor::zeros(ta.shape);
  for (size_t i = 0; i < out.size(); ++i) out.data[i] = std::exp(ta.data[i]);
  SOTA_INPUT_GRADS(ia);
  const int iy = static_cast<int>(nodes_.size());
  return emit("exp", {ia}, std::move(out),
              [ia, iy](Tape& t, const Tensor& g, GradAcc& acc) {
                Tensor ga = Tensor::zeros(g.shape);
                kern::mul(ga.data.data(), g.data.data(), t.in(iy).data.data(), g.size());
                acc.add(ia, ga);
              },
              needs);
}

Var Tape::log(Var a) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  Tensor out = Tensor::zeros(ta.shape);
  for (size_t i = 0; i < out.size(); ++i) out.data[i] = std::log(ta.data[i]);
  SOTA_INPUT_GRADS(ia);
  return emit("log", {ia}, std::move(out),
              [ia](Tape& t, const Tensor& g, GradAcc& acc) {
                const Tensor& x = t.in(ia);
                Tensor ga = Tensor::zeros(g.shape);
                for (size_t i = 0; i < g.size(); ++i) ga.data[i] = g.data[i] / x.data[i];
                acc.add(ia, ga);
              },
              needs);
}

Var Tape::tanh_op(Var a) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  Tensor out = Tensor::zeros(ta.shape);
  for (size_t i = 0; i < out.size(); ++i) out.data[i] = std::tanh(ta.data[i]);
  SOTA_INPUT_GRADS(ia);
  const int iy = static_cast<int>(nodes_.size());
  return emit("tanh", {ia}, std::move(out),
              [ia, iy](Tape& t, const Tensor& g, GradAcc& acc) {
                const Tensor& y = t.in(iy);
                Tensor ga = Tensor::zeros(g.shape);
                for (size_t i = 0; i < g.size(); ++i)
                  ga.data[i] = g.data[i] * (1.0 - y.data[i] * y.data[i]);
                acc.add(ia, ga);
              },
              needs);
}

Var Tape::sqrt_op(Var a) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  Tensor out = Tensor::zeros(ta.shape);
  for (size_t i = 0; i < out.size(); ++i) out.data[i] = std::sqrt(ta.data[i]);
  SOTA_INPUT_GRADS(ia);
  const int iy = static_cast<int>(nodes_.size());
  return emit("sqrt", {ia}, std::move(out),
              [ia, iy](Tape& t, const Tensor& g, GradAcc& acc) {
                const Tensor& y = t.in(iy);
                Tensor ga = Tensor::zeros(g.shape);
                for (size_t i = 0; i < g.size(); ++i) ga.data[i] = g.data[i] * 0.5 / y.data[i];
                acc.add(ia, ga);
              },
              needs);
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Var Tape::gelu(Var a) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  Tensor out = Tensor::zeros(ta.shape);
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = ta.data[i];
    out.data[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  SOTA_INPUT_GRADS(ia);
  return emit("gelu", {ia}, std::move(out),
              [ia](Tape& t, const Tensor& g, GradAcc& acc) {
                const Tensor& x = t.in(ia);
                Tensor ga = Tensor::zeros(g.shape);
                for (size_t i = 0; i < g.size(); ++i) {
                  const double xi = x.data[i];
                  const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
                  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
                  ga.data[i] = g.data[i] * (cdf + xi * pdf);
                }
                acc.add(ia, ga);
              },
              needs);
}

Var Tape::clamp_min(Var a, double floor) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  Tensor out = ta;
  for (auto& v : out.data) v = std::max(v, floor);
  SOTA_INPUT_GRADS(ia);
  return emit("clamp_min", {ia}, std::move(out),
              [ia, floor](Tape& t, const Tensor& g, GradAcc& acc) {
                const Tensor& x = t.in(ia);
                Tensor ga = Tensor::zeros(g.shape);
                for (size_t i = 0; i < g.size(); ++i)
                  ga.data[i] = x.data[i] > floor ? g.data[i] : 0.0;
                acc.add(ia, ga);
              },
              needs);
}

Var Tape::matmul(Var a, Var b) {
  const int ia = check_var(a), ib = check_var(b);
  const Tensor& ta = in(ia);
  const Tensor& tb = in(ib);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
    throw NumericError("matmul shape mismatch " + ta.shape_str() + " * " + tb.shape_str());
  const size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out = Tensor::zeros({m, n});
  kern::matmul_acc(out.data.data(), ta.data.data(), tb.data.data(), m, k, n);
  SOTA_INPUT_GRADS(ia, ib);
  return emit("matmul", {ia, ib}, std::move(out),
              [ia, ib, m, k, n](Tape& t, const Tensor& g, GradAcc& acc) {
                const Tensor& A = t.in(ia);
                const Tensor& B = t.in(ib);
                if (t.nodes_[ia].needs_grad) {
                  // gA[m,k] = dot(g[m,:], B[k,:])
                  Tensor ga = Tensor::zeros({m, k});
                  for (size_t i = 0; i < m; ++i)
                    for (size_t kk = 0; kk < k; ++kk)
                      ga.data[i * k + kk] =
                          kern::dot(g.data.data() + i * n, B.data.data() + kk * n, n);
                  acc.add(ia, ga);
                }
                if (t.nodes_[ib].needs_grad) {
                  // gB[k,n] += A[m,k] * g[m,n]
                  Tensor gb = Tensor::zeros({k, n});
                  for (size_t i = 0; i < m; ++i)
                    for (size_t kk = 0; kk < k; ++kk) {
                      const double aik = A.data[i * k + kk];
                      if (aik != 0.0)
                        kern::axpy(gb.data.data() + kk * n, aik, g.data.data() + i * n, n);
                    }
                  acc.add(ib, gb);
                }
              },
              needs);
}

Var Tape::transpose(Var a) {
  const int ia = check_var(a);
  Tensor out = sota::transpose(in(ia));
  SOTA_INPUT_GRADS(ia);
  return emit("transpose", {ia}, std::move(out),
              [ia](Tape&, const Tensor& g, GradAcc& acc) { acc.add(ia, sota::transpose(g)); },
              needs);
}

Var Tape::sum_all(Var a) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  Tensor out = Tensor::scalar(kern::sum(ta.data.data(), ta.size()));
  SOTA_INPUT_GRADS(ia);
  return emit("sum_all", {ia}, std::move(out),
              [ia](Tape& t, const Tensor& g, GradAcc& acc) {
                acc.add(ia, Tensor::full(t.in(ia).shape, g.data[0]));
              },
              needs);
}

Var Tape::mean_all(Var a) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  const double inv = 1.0 / static_cast<double>(ta.size());
  Tensor out = Tensor::scalar(kern::sum(ta.data.data(), ta.size()) * inv);
  SOTA_INPUT_GRADS(ia);
  return emit("mean_all", {ia}, std::move(out),
              [ia, inv](Tape& t, const Tensor& g, GradAcc& acc) {
                acc.add(ia, Tensor::full(t.in(ia).shape, g.data[0] * inv));
              },
              needs);
}

Var Tape::sum_axis0(Var a) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  const size_t m = ta.rows(), n = ta.cols();
  Tensor out = Tensor::zeros({n});
  for (size_t i = 0; i < m; ++i) kern::axpy(out.data.data(), 1.0, ta.data.data() + i * n, n);
  SOTA_INPUT_GRADS(ia);
  return emit("sum_axis0", {ia}, std::move(out),
              [ia, m, n](Tape&, const Tensor& g, GradAcc& acc) {
                Tensor ga = Tensor::zeros({m, n});
                for (size_t i = 0; i < m; ++i)
                  std::copy(g.data.begin(), g.data.end(), ga.data.begin() + i * n);
                acc.add(ia, ga);
              },
              needs);
}

Var Tape::sum_axis1(Var a) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  const size_t m = ta.rows(), n = ta.cols();
  Tensor out = Tensor::zeros({m});
  for (size_t i = 0; i < m; ++i) out.data[i] = kern::sum(ta.data.data() + i * n, n);
  SOTA_INPUT_GRADS(ia);
  return emit("sum_axis1", {ia}, std::move(out),
              [ia, m, n](Tape&, const Tensor& g, GradAcc& acc) {
                Tensor ga = Tensor::zeros({m, n});
                for (size_t i = 0; i < m; ++i)
                  for (size_t j = 0; j < n; ++j) ga.data[i * n + j] = g.data[i];
                acc.add(ia, ga);
              },
              needs);
}

Var Tape::logsumexp_axis1(Var a) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  const size_t m = ta.rows(), n = ta.cols();
  Tensor out = Tensor::zeros({m});
  for (size_t i = 0; i < m; ++i) {
    const double* row = ta.data.data() + i * n;
    double mx = row[0];
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    out.data[i] = mx + std::log(s);
  }
  SOTA_INPUT_GRADS(ia);
  const int iy = static_cast<int>(nodes_.size());
  return emit("logsumexp_axis1", {ia}, std::move(out),
              [ia, iy, m, n](Tape& t, const Tensor& g, GradAcc& acc) {
                const Tensor& x = t.in(ia);
                const Tensor& y = t.in(iy);
                Tensor ga = Tensor::zeros({m, n});
                for (size_t i = 0; i < m; ++i)
                  for (size_t j = 0; j < n; ++j)
                    ga.data[i * n + j] = g.data[i] * std::exp(x.data[i * n + j] - y.data[i]);
                acc.add(ia, ga);
              },
              needs);
}

Var Tape::logsumexp_axis0(Var a) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  const size_t m = ta.rows(), n = ta.cols();
  Tensor out = Tensor::zeros({n});
  for (size_t j = 0; j < n; ++j) {
    double mx = ta.data[j];
    for (size_t i = 1; i < m; ++i) mx = std::max(mx, ta.data[i * n + j]);
    double s = 0.0;
    for (size_t i = 0; i < m; ++i) s += std::exp(ta.data[i * n + j] - mx);
    out.data[j] = mx + std::log(s);
  }
  SOTA_INPUT_GRADS(ia);
  const int iy = static_cast<int>(nodes_.size());
  return emit("logsumexp_axis0", {ia}, std::move(out),
              [ia, iy, m, n](Tape& t, const Tensor& g, GradAcc& acc) {
                const Tensor& x = t.in(ia);
                const Tensor& y = t.in(iy);
                Tensor ga = Tensor::zeros({m, n});
                for (size_t i = 0; i < m; ++i)
                  for (size_t j = 0; j < n; ++j)
                    ga.data[i * n + j] = g.data[j] * std::exp(x.data[i * n + j] - y.data[j]);
                acc.add(ia, ga);
              },
              needs);
}

Var Tape::broadcast_row(Var v, size_t m) {
  const int iv = check_var(v);
  const Tensor& tv = in(iv);
  if (tv.rank() != 1) throw NumericError("broadcast_row needs rank 1, got " + tv.shape_str());
  const size_t n = tv.size();
  Tensor out = Tensor::zeros({m, n});
  for (size_t i = 0; i < m; ++i)
    std::copy(tv.data.begin(), tv.data.end(), out.data.begin() + i * n);
  SOTA_INPUT_GRADS(iv);
  return emit("broadcast_row", {iv}, std::move(out),
              [iv, m, n](Tape&, const Tensor& g, GradAcc& acc) {
                Tensor gv = Tensor::zeros({n});
                for (size_t i = 0; i < m; ++i)
                  kern::axpy(gv.data.data(), 1.0, g.data.data() + i * n, n);
                acc.add(iv, gv);
              },
              needs);
}

Var Tape::broadcast_col(Var v, size_t n) {
  const int iv = check_var(v);
  const Tensor& tv = in(iv);
  if (tv.rank() != 1) throw NumericError("broadcast_col needs rank 1, got " + tv.shape_str());
  const size_t m = tv.size();
  Tensor out = Tensor::zeros({m, n});
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out.data[i * n + j] = tv.data[i];
  SOTA_INPUT_GRADS(iv);
  return emit("broadcast_col", {iv}, std::move(out),
              [iv, m, n](Tape&, const Tensor& g, GradAcc& acc) {
                Tensor gv = Tensor::zeros({m});
                for (size_t i = 0; i < m; ++i) gv.data[i] = kern::sum(g.data.data() + i * n, n);
                acc.add(iv, gv);
              },
              needs);
}

Var Tape::reshape(Var a, std::vector<size_t> shape) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  size_t prod = 1;
  for (size_t d : shape) prod *= d;
  if (prod != ta.size())
    throw NumericError("reshape size mismatch from " + ta.shape_str());
  Tensor out(shape, ta.data);
  SOTA_INPUT_GRADS(ia);
  return emit("reshape", {ia}, std::move(out),
              [ia](Tape& t, const Tensor& g, GradAcc& acc) {
                acc.add(ia, Tensor(t.in(ia).shape, g.data));
              },
              needs);
}

Var Tape::slice_rows(Var a, size_t lo, size_t hi) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  const size_t m = ta.rows(), n = ta.cols();
  if (lo >= hi || hi > m) throw NumericError("slice_rows out of range");
  Tensor out = Tensor::zeros({hi - lo, n});
  std::copy(ta.data.begin() + lo * n, ta.data.begin() + hi * n, out.data.begin());
  SOTA_INPUT_GRADS(ia);
  return emit("slice_rows", {ia}, std::move(out),
              [ia, lo, hi, m, n](Tape&, const Tensor& g, GradAcc& acc) {
                Tensor ga = Tensor::zeros({m, n});
                std::copy(g.data.begin(), g.data.end(), ga.data.begin() + lo * n);
                acc.add(ia, ga);
              },
              needs);
}

Var Tape::slice_cols(Var a, size_t lo, size_t hi) {
  const int ia = check_var(a);
  const Tensor& ta = in(ia);
  const size_t m = ta.rows(), n = ta.cols();
  if (lo >= hi || hi > n) throw NumericError("slice_cols out of range");
  const size_t w = hi - lo;
  Tensor out = Tensor::zeros({m, w});
  for (size_t i = 0; i < m; ++i)
    std::copy(ta.data.begin() + i * n + lo, ta.data.begin() + i * n + hi,
              out.data.begin() + i * w);
  SOTA_INPUT_GRADS(ia);
  return emit("slice_cols", {ia}, std::move(out),
              [ia, lo, m, n, w](Tape&, const Tensor& g, GradAcc& acc) {
                Tensor ga = Tensor::zeros({m, n});
                for (size_t i = 0; i < m; ++i)
                  std::copy(g.data.begin() + i * w, g.data.begin() + (i + 1) * w,
                            ga.data.begin() + i * n + lo);
                acc.add(ia, ga);
              },
              needs);
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw NumericError("concat_rows on empty list");
  std::vector<int> ids;
  size_t m = 0;
  const size_t n = in(check_var(parts[0])).cols();
  for (Var p : parts) {
    const int ip = check_var(p);
    if (in(ip).cols() != n) throw NumericError("concat_rows column mismatch");
    m += in(ip).rows();
    ids.push_back(ip);
  }
  Tensor out = Tensor::zeros({m, n});
  size_t off = 0;
  for (int ip : ids) {
    const Tensor& tp = in(ip);
    std::copy(tp.data.begin(), tp.data.end(), out.data.begin() + off);
    off += tp.size();
  }
  bool needs = false;
  for (int ip : ids) needs = needs || nodes_[static_cast<size_t>(ip)].needs_grad;
  return emit("concat_rows", ids, std::move(out),
              [ids, n](Tape& t, const Tensor& g, GradAcc& acc) {
                size_t off = 0;
                for (int ip : ids) {
                  const Tensor& tp = t.in(ip);
                  if (t.nodes_[ip].needs_grad) {
                    Tensor gp = Tensor::zeros(tp.shape);
                    std::copy(g.data.begin() + off, g.data.begin() + off + tp.size(),
                              gp.data.begin());
                    acc.add(ip, gp);
                  }
                  off += tp.size();
                }
              },
              needs);
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw NumericError("concat_cols on empty list");
  std::vector<int> ids;
  std::vector<size_t> widths;
  const size_t m = in(check_var(parts[0])).rows();
  size_t n = 0;
  for (Var p : parts) {
    const int ip = check_var(p);
    if (in(ip).rows() != m) throw NumericError("concat_cols row mismatch");
    widths.push_back(in(ip).cols());
    n += widths.back();
    ids.push_back(ip);
  }
  Tensor out = Tensor::zeros({m, n});
  size_t col = 0;
  for (size_t k = 0; k < ids.size(); ++k) {
    const Tensor& tp = in(ids[k]);
    for (size_t i = 0; i < m; ++i)
      std::copy(tp.data.begin() + i * widths[k], tp.data.begin() + (i + 1) * widths[k],
                out.data.begin() + i * n + col);
    col += widths[k];
  }
  bool needs = false;
  for (int ip : ids) needs = needs || nodes_[static_cast<size_t>(ip)].needs_grad;
  return emit("concat_cols", ids, std::move(out),
              [ids, widths, m, n](Tape& t, const Tensor& g, GradAcc& acc) {
                size_t col = 0;
                for (size_t k = 0; k < ids.size(); ++k) {
                  if (t.nodes_[ids[k]].needs_grad) {
                    Tensor gp = Tensor::zeros({m, widths[k]});
                    for (size_t i = 0; i < m; ++i)
                      std::copy(g.data.begin() + i * n + col,
                                g.data.begin() + i * n + col + widths[k],
                                gp.data.begin() + i * widths[k]);
                    acc.add(ids[k], gp);
                  }
                  col += widths[k];
                }
              },
              needs);
}

Var Tape::conv1d(Var x, Var w, Var b, size_t stride, size_t pad) {
  const int ix = check_var(x), iw = check_var(w), ib = check_var(b);
  const Tensor& tx = in(ix);
  const Tensor& tw = in(iw);
  const Tensor& tb = in(ib);
  if (tx.rank() != 2 || tw.rank() != 3 || tb.rank() != 1)
    throw NumericError("conv1d expects x[C,L], w[Co,Ci,K], b[Co]");
  const size_t ci = tx.shape[0], len = tx.shape[1];
  const size_t co = tw.shape[0], k = tw.shape[2];
  if (tw.shape[1] != ci) throw NumericError("conv1d channel mismatch");
  if (tb.size() != co) throw NumericError("conv1d bias size mismatch");
  if (len + 2 * pad < k) throw NumericError("conv1d kernel larger than padded input");
  const size_t lout = (len + 2 * pad - k) / stride + 1;

  Tensor out = Tensor::zeros({co, lout});
  for (size_t oc = 0; oc < co; ++oc) {
    for (size_t ol = 0; ol < lout; ++ol) {
      double s = tb.data[oc];
      for (size_t icn = 0; icn < ci; ++icn) {
        const double* xrow = tx.data.data() + icn * len;
        const double* wrow = tw.data.data() + (oc * ci + icn) * k;
        for (size_t kk = 0; kk < k; ++kk) {
          const long pos = static_cast<long>(ol * stride + kk) - static_cast<long>(pad);
          if (pos >= 0 && pos < static_cast<long>(len)) s += wrow[kk] * xrow[pos];
        }
      }
      out.data[oc * lout + ol] = s;
    }
  }
  SOTA_INPUT_GRADS(ix, iw, ib);
  return emit(
      "conv1d", {ix, iw, ib}, std::move(out),
      [ix, iw, ib, stride, pad, ci, len, co, k, lout](Tape& t, const Tensor& g, GradAcc& acc) {
        const Tensor& xv = t.in(ix);
        const Tensor& wv = t.in(iw);
        if (t.nodes_[ib].needs_grad) {
          Tensor gb = Tensor::zeros({co});
          for (size_t oc = 0; oc < co; ++oc)
            gb.data[oc] = kern::sum(g.data.data() + oc * lout, lout);
          acc.add(ib, gb);
        }
        if (t.nodes_[iw].needs_grad) {
          Tensor gw = Tensor::zeros({co, ci, k});
          for (size_t oc = 0; oc < co; ++oc)
            for (size_t icn = 0; icn < ci; ++icn)
              for (size_t kk = 0; kk < k; ++kk) {
                double s = 0.0;
                for (size_t ol = 0; ol < lout; ++ol) {
                  const long pos = static_cast<long>(ol * stride + kk) - static_cast<long>(pad);
                  if (pos >= 0 && pos < static_cast<long>(len))
                    s += g.data[oc * lout + ol] * xv.data[icn * len + pos];
                }
                gw.data[(oc * ci + icn) * k + kk] = s;
              }
          acc.add(iw, gw);
        }
        if (t.nodes_[ix].needs_grad) {
          Tensor gx = Tensor::zeros({ci, len});
          for (size_t oc = 0; oc < co; ++oc)
            for (size_t icn = 0; icn < ci; ++icn) {
              const double* wrow = wv.data.data() + (oc * ci + icn) * k;
              for (size_t ol = 0; ol < lout; ++ol) {
                const double go = g.data[oc * lout + ol];
                if (go == 0.0) continue;
                for (size_t kk = 0; kk < k; ++kk) {
                  const long pos = static_cast<long>(ol * stride + kk) - static_cast<long>(pad);
                  if (pos >= 0 && pos < static_cast<long>(len))
                    gx.data[icn * len + pos] += go * wrow[kk];
                }
              }
            }
          acc.add(ix, gx);
        }
      },
      needs);
}

Var Tape::upsample2(Var x) {
  const int ix = check_var(x);
  const Tensor& tx = in(ix);
  if (tx.rank() != 2) throw NumericError("upsample2 expects [C,L]");
  const size_t c = tx.shape[0], len = tx.shape[1];
  Tensor out = Tensor::zeros({c, 2 * len});
  for (size_t ch = 0; ch < c; ++ch)
    for (size_t l = 0; l < len; ++l) {
      out.data[ch * 2 * len + 2 * l] = tx.data[ch * len + l];
      out.data[ch * 2 * len + 2 * l + 1] = tx.data[ch * len + l];
    }
  SOTA_INPUT_GRADS(ix);
  return emit("upsample2", {ix}, std::move(out),
              [ix, c, len](Tape&, const Tensor& g, GradAcc& acc) {
                Tensor gx = Tensor::zeros({c, len});
                for (size_t ch = 0; ch < c; ++ch)
                  for (size_t l = 0; l < len; ++l)
                    gx.data[ch * len + l] =
                        g.data[ch * 2 * len + 2 * l] + g.data[ch * 2 * len + 2 * l + 1];
                acc.add(ix, gx);
              },
              needs);
}

Var Tape::softmax_vec(Var a) {
  const Tensor& ta = val(a);
  if (ta.rank() != 1) throw NumericError("softmax_vec needs rank 1");
  Var row = reshape(a, {1, ta.size()});
  Var sm = softmax_rows(row);
  return reshape(sm, {ta.size()});
}

Var Tape::softmax_rows(Var a) {
  const Tensor& ta = val(a);
  Var lse = logsumexp_axis1(a);                       // [M]
  Var shifted = sub(a, broadcast_col(lse, ta.cols()));  // log softmax
  return exp(shifted);
}

Var Tape::mse(Var pred, Var target) {
  Var d = sub(pred, target);
  return mean_all(mul(d, d));
}

Var Tape::apply_custom(const std::string& op, const std::vector<Var>& inputs, Tensor value,
                       BackwardFn backward, bool needs_grad) {
  std::vector<int> ids;
  bool needs = needs_grad;
  for (Var v : inputs) {
    ids.push_back(check_var(v));
    needs = needs || nodes_[static_cast<size_t>(ids.back())].needs_grad;
  }
  return emit(op, std::move(ids), std::move(value), std::move(backward), needs);
}

void Tape::backward(Var out, const Tensor& out_grad, GradMap& sink) {
  const int iout = check_var(out);
  if (backward_done_)
    throw NumericError("double-backward is not supported: tape already differentiated");
  backward_done_ = true;
  if (!val(out).same_shape(out_grad))
    throw NumericError("out_grad shape " + out_grad.shape_str() + " does not match output " +
                       val(out).shape_str());
  GradAcc acc(nodes_.size());
  acc.add(iout, out_grad);
  for (int id = iout; id >= 0; --id) {
    const Node& node = nodes_[static_cast<size_t>(id)];
    if (!node.needs_grad || !acc.has(id)) continue;
    if (node.backward) node.backward(*this, acc.at(id), acc);
    if (!node.param_name.empty()) {
      auto it = sink.find(node.param_name);
      if (it == sink.end()) {
        sink[node.param_name] = acc.at(id);
      } else {
        if (!it->second.same_shape(acc.at(id)))
          throw NumericError("gradient shape mismatch for " + node.param_name);
        kern::add(it->second.data.data(), it->second.data.data(), acc.at(id).data.data(),
                  it->second.size());
      }
    }
  }
}

void Tape::backward_scalar(Var loss, GradMap& sink) {
  if (val(loss).size() != 1) throw NumericError("backward_scalar expects a scalar loss");
  backward(loss, Tensor::scalar(1.0), sink);
}

// ---------------------------------------------------------------------------
// finite-difference verification
// ---------------------------------------------------------------------------

GradCheckReport check_gradients(const std::function<Var(Tape&, ParamStore&)>& fn,
                                ParamStore& store, double h, double tol,
                                size_t sample_per_tensor, Rng* rng) {
  GradMap analytic;
  {
    Tape tape;
    Var loss = fn(tape, store);
    tape.backward_scalar(loss, analytic);
  }
  auto eval = [&]() {
    Tape tape;
    Var loss = fn(tape, store);
    return tape.val(loss).data[0];
  };

  GradCheckReport report;
  for (auto& [name, p] : store.params) {
    std::vector<size_t> indices;
    if (sample_per_tensor == 0 || p.size() <= sample_per_tensor) {
      indices.resize(p.size());
      for (size_t i = 0; i < p.size(); ++i) indices[i] = i;
    } else {
      if (!rng) throw NumericError("check_gradients: sampling requires an rng");
      for (size_t i = 0; i < sample_per_tensor; ++i)
        indices.push_back(rng->uniform_int(p.size()));
    }
    const Tensor* an = analytic.count(name) ? &analytic.at(name) : nullptr;
    double worst = 0.0;
    for (size_t idx : indices) {
      const double old = p.data[idx];
      p.data[idx] = old + h;
      const double fp = eval();
      p.data[idx] = old - h;
      const double fm = eval();
      p.data[idx] = old;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = an ? an->data[idx] : 0.0;
      // the denominator floor absorbs central-difference cancellation noise
      // on (near-)zero gradients; real backward bugs sit orders above it
      const double rel = std::fabs(fd - a) / std::max({std::fabs(fd), std::fabs(a), 1e-4});
      worst = std::max(worst, rel);
    }
    report.entries.push_back({name, worst});
    if (worst > report.worst) {
      report.worst = worst;
      report.worst_name = name;
    }
  }
  report.pass = report.worst <= tol;
  return report;
}

}  // namespace sota
