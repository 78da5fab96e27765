// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "sota/rng.hpp"
#include "sota/tensor.hpp"

namespace sota {

// name -> gradient tensor, shapes mirror the parameters
using GradMap = std::map<std::string, Tensor>;

// Named parameters plus gradient accumulators. Shared read-only across
// tapes during rollouts; updates require exclusive access.
struct ParamStore {
  std::map<std::string, Tensor> params;
  GradMap grads;
  uint64_t init_seed = 0;

  Tensor& add(const std::string& name, Tensor init);
  bool has(const std::string& name) const { return params.count(name) > 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  Tensor& grad(const std::string& name);
  void zero_grads();
  void accumulate(const GradMap& other);
  size_t scalar_count() const;
  uint64_t content_hash() const;

  // Binary format: magic "SOTA", version u32, count u32, then per
  // parameter {name_len u32, name bytes, rank u32, dims u32..., f32 data},
  // all little-endian.
  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);
};

class Tape;

// Handle to a node on a tape. Cheap to copy; invalid after Tape::clear().
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
};

// Accumulates gradients per node id during a backward pass.
class GradAcc {
 public:
  explicit GradAcc(size_t n) : slots_(n), present_(n, false) {}
  void add(int id, const Tensor& g);
  bool has(int id) const { return present_[static_cast<size_t>(id)]; }
  const Tensor& at(int id) const { return slots_[static_cast<size_t>(id)]; }

 private:
  std::vector<Tensor> slots_;
  std::vector<bool> present_;
};

using BackwardFn = std::function<void(Tape&, const Tensor& gout, GradAcc& acc)>;

// Eager tape: ops compute immediately and record a backward closure.
// Backward visits nodes in reverse id order, which is reverse topological
// order by construction, exactly once. Nodes live in a deque so Tensor
// references returned by val() stay valid while further ops are emitted.
class Tape {
 public:
  bool check_finite = true;

  Var constant(Tensor v, const std::string& op = "const");
  Var param(const ParamStore& store, const std::string& name);

  // elementwise / scalar
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var scale(Var a, double s);
  Var add_const(Var a, double c);
  Var exp(Var a);
  Var log(Var a);
  Var tanh_op(Var a);
  Var sqrt_op(Var a);
  Var gelu(Var a);
  Var clamp_min(Var a, double floor);
  Var square(Var a) { return mul(a, a); }

  // linear algebra (rank 2)
  Var matmul(Var a, Var b);
  Var transpose(Var a);

  // reductions / broadcast (rank 2 unless noted)
  Var sum_all(Var a);   // -> [1]
  Var mean_all(Var a);  // -> [1]
  Var sum_axis0(Var a);       // [M,N] -> [N]
  Var sum_axis1(Var a);       // [M,N] -> [M]
  Var logsumexp_axis0(Var a);  // [M,N] -> [N], max-subtracted
  Var logsumexp_axis1(Var a);  // [M,N] -> [M], max-subtracted
  Var broadcast_row(Var v, size_t m);  // [N] -> [M,N]
  Var broadcast_col(Var v, size_t n);  // [M] -> [M,N]

  // shape
  Var reshape(Var a, std::vector<size_t> shape);
  Var slice_rows(Var a, size_t lo, size_t hi);
  Var slice_cols(Var a, size_t lo, size_t hi);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);

  // temporal conv, channels-first x:[Cin,L], w:[Cout,Cin,K], b:[Cout]
  Var conv1d(Var x, Var w, Var b, size_t stride, size_t pad);
  Var upsample2(Var x);  // [C,L] -> [C,2L] nearest-neighbor

  // compositions
  Var softmax_vec(Var a);    // [N] -> [N]
  Var softmax_rows(Var a);   // [M,N] -> [M,N], rows sum to 1
  Var dot(Var a, Var b) { return sum_all(mul(a, b)); }
  Var mse(Var pred, Var target);

  // Escape hatch for extensions and test fixtures; the caller supplies
  // the output value and the backward closure.
  Var apply_custom(const std::string& op, const std::vector<Var>& inputs, Tensor value,
                   BackwardFn backward, bool needs_grad = true);

  // Accumulates d(out)/d(param) into sink for every reachable parameter.
  // A second call on the same tape is an error (no double-backward).
  void backward(Var out, const Tensor& out_grad, GradMap& sink);
  void backward_scalar(Var loss, GradMap& sink);

  const Tensor& val(Var v) const;
  const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    std::string op;
    std::vector<int> inputs;
    Tensor value;
    BackwardFn backward;
    bool needs_grad = false;
    std::string param_name;  // non-empty for parameter leaves
  };

  Var emit(const std::string& op, std::vector<int> inputs, Tensor value, BackwardFn backward,
           bool needs_grad);
  int check_var(Var v) const;
  const Tensor& in(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// Central finite-difference gradient verification. Evaluates the scalar
// loss built by fn at perturbed parameters and compares against the tape
// gradient. When sample_per_tensor > 0, at most that many entries per
// parameter are probed (chosen deterministically from rng).
struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  bool pass = false;
  std::string worst_name;
};

GradCheckReport check_gradients(const std::function<Var(Tape&, ParamStore&)>& fn,
                                ParamStore& store, double h = 1e-5, double tol = 1e-4,
                                size_t sample_per_tensor = 0, Rng* rng = nullptr);

}  // namespace sota
