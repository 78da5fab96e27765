// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>

#include "sota/autodiff.hpp"
#include "sota/tensor.hpp"

namespace sota::ot {

// Entropy-regularized transport problem: minimize <Pi, C> - eps * H(Pi)
// subject to Pi 1 = supply, Pi^T 1 = capacity.
struct OTProblem {
  Tensor cost;      // [L, P]
  Tensor supply;    // [L], non-negative, sums to 1
  Tensor capacity;  // [P], non-negative, sums to 1
  double epsilon = 0.2;
  size_t iterations = 5;

  void validate() const;
};

struct TransportPlan {
  Tensor plan;   // [L, P], non-negative
  Tensor kappa;  // [L] log-domain dual
  Tensor nu;     // [P] log-domain dual
  double row_err = 0.0;
  double col_err = 0.0;
};

// Marginals with zero entries are clamped to this floor and renormalized
// before the solver takes logs.
constexpr double kMarginalFloor = 1e-12;

Tensor clamp_renormalize(const Tensor& marginal);

struct SinkhornVars {
  Var plan;
  Var kappa;
  Var nu;
};

// Unrolled log-domain Sinkhorn on a tape: iterations alternate the kappa
// (row) and nu (column) updates starting from nu = 0 and finishing on nu,
// so column marginals are exact. Differentiable w.r.t. cost and supply.
SinkhornVars sinkhorn_logdomain_graph(Tape& t, Var cost, Var supply, const Tensor& capacity,
                                      double epsilon, size_t iterations);

TransportPlan sinkhorn_logdomain(const OTProblem& problem);

// (max |Pi 1 - supply|, max |Pi^T 1 - capacity|), measured against the
// clamped-and-renormalized marginals the solver actually used.
std::pair<double, double> marginal_error(const TransportPlan& plan, const OTProblem& problem);

// <Pi, C> - eps * H(Pi) with 0 log 0 = 0; throws on negative entries.
double entropic_objective(const TransportPlan& plan, const OTProblem& problem);
Var entropic_objective_graph(Tape& t, Var plan, Var cost, double epsilon);

// Independent long-run reference for tiny instances (plain-domain
// multiplicative Sinkhorn, 10^4 iterations, ends on the capacity update).
// Test oracle only; throws if L or P exceeds 8.
TransportPlan exact_oracle(const OTProblem& problem);

// Plan as CSV, L rows and P columns.
void export_csv(const TransportPlan& plan, const std::string& path);

}  // namespace sota::ot
