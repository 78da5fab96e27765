// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "sota/ot.hpp"

#include <cmath>
#include <fstream>

#include "sota/kernels.hpp"
#include "sota/util.hpp"

namespace sota::ot {

void OTProblem::validate() const {
  if (cost.rank() != 2) throw NumericError("OT cost must be rank 2");
  const size_t l = cost.rows(), p = cost.cols();
  if (supply.shape != std::vector<size_t>{l} || capacity.shape != std::vector<size_t>{p})
    throw NumericError("OT marginal shapes do not match cost " + cost.shape_str());
  if (!(epsilon > 0.0)) throw NumericError("OT temperature must be positive");
  if (iterations < 1) throw NumericError("OT iteration count must be >= 1");
  if (!cost.finite()) throw NumericError("OT cost contains non-finite entries");
  double sg = 0.0, sb = 0.0;
  for (double v : supply.data) {
    if (v < 0.0) throw NumericError("negative supply entry");
    sg += v;
  }
  for (double v : capacity.data) {
    if (v < 0.0) throw NumericError("negative capacity entry");
    sb += v;
  }
  if (std::fabs(sg - 1.0) > 1e-9) throw NumericError("supply does not sum to 1");
  if (std::fabs(sb - 1.0) > 1e-9) throw NumericError("capacity does not sum to 1");
}

Tensor clamp_renormalize(const Tensor& marginal) {
  Tensor out = marginal;
  double s = 0.0;
  for (auto& v : out.data) {
    v = std::max(v, kMarginalFloor);
    s += v;
  }
  for (auto& v : out.data) v /= s;
  return out;
}

SinkhornVars sinkhorn_logdomain_graph(Tape& t, Var cost, Var supply, const Tensor& capacity,
                                      double epsilon, size_t iterations) {
  if (!(epsilon > 0.0)) throw NumericError("OT temperature must be positive");
  if (iterations < 1) throw NumericError("OT iteration count must be >= 1");
  const size_t l = t.val(cost).rows();
  const size_t p = t.val(cost).cols();

  // differentiable clamp + renormalize of the supply
  Var gamma = t.clamp_min(supply, kMarginalFloor);
  Var gsum = t.sum_all(gamma);  // [1]
  Var inv = t.div(t.constant(Tensor::scalar(1.0)), gsum);
  gamma = t.reshape(t.mul(t.reshape(gamma, {1, l}), t.broadcast_col(inv, l)), {l});

  Tensor beta = clamp_renormalize(capacity);
  Tensor log_beta = beta;
  for (auto& v : log_beta.data) v = std::log(v);

  Var log_gamma = t.log(gamma);                       // [L]
  Var s = t.scale(cost, -1.0 / epsilon);              // -C/eps, [L,P]
  Var nu = t.constant(Tensor::zeros({p}), "nu0");     // [P]
  Var kappa{};
  const Var log_beta_c = t.constant(log_beta, "log_beta");

  for (size_t it = 0; it < iterations; ++it) {
    Var m_row = t.add(s, t.broadcast_row(nu, l));            // [L,P]
    kappa = t.sub(log_gamma, t.logsumexp_axis1(m_row));      // [L]
    Var m_col = t.add(s, t.broadcast_col(kappa, p));         // [L,P]
    nu = t.sub(log_beta_c, t.logsumexp_axis0(m_col));        // [P]
  }

  Var log_plan = t.add(t.add(s, t.broadcast_col(kappa, p)), t.broadcast_row(nu, l));
  return SinkhornVars{t.exp(log_plan), kappa, nu};
}

TransportPlan sinkhorn_logdomain(const OTProblem& problem) {
  problem.validate();
  Tape t;
  Var cost = t.constant(problem.cost, "cost");
  Var supply = t.constant(problem.supply, "supply");
  SinkhornVars v = sinkhorn_logdomain_graph(t, cost, supply, problem.capacity, problem.epsilon,
                                            problem.iterations);
  TransportPlan out;
  out.plan = t.val(v.plan);
  out.kappa = t.val(v.kappa);
  out.nu = t.val(v.nu);
  auto [row_err, col_err] = marginal_error(out, problem);
  out.row_err = row_err;
  out.col_err = col_err;
  return out;
}

std::pair<double, double> marginal_error(const TransportPlan& plan, const OTProblem& problem) {
  const size_t l = plan.plan.rows(), p = plan.plan.cols();
  const Tensor gamma = clamp_renormalize(problem.supply);
  const Tensor beta = clamp_renormalize(problem.capacity);
  double row_err = 0.0, col_err = 0.0;
  for (size_t i = 0; i < l; ++i) {
    const double rs = kern::sum(plan.plan.data.data() + i * p, p);
    row_err = std::max(row_err, std::fabs(rs - gamma.data[i]));
  }
  for (size_t j = 0; j < p; ++j) {
    double cs = 0.0;
    for (size_t i = 0; i < l; ++i) cs += plan.plan(i, j);
    col_err = std::max(col_err, std::fabs(cs - beta.data[j]));
  }
  return {row_err, col_err};
}

double entropic_objective(const TransportPlan& plan, const OTProblem& problem) {
  if (!plan.plan.same_shape(problem.cost))
    throw NumericError("plan/cost shape mismatch in entropic_objective");
  double cost_term = 0.0, entropy = 0.0;
  for (size_t i = 0; i < plan.plan.size(); ++i) {
    const double pi = plan.plan.data[i];
    if (pi < 0.0) throw NumericError("negative transport plan entry");
    cost_term += pi * problem.cost.data[i];
    if (pi > 0.0) entropy -= pi * std::log(pi);
  }
  return cost_term - problem.epsilon * entropy;
}

Var entropic_objective_graph(Tape& t, Var plan, Var cost, double epsilon) {
  Var cost_term = t.sum_all(t.mul(plan, cost));
  // H = -sum pi log pi; the solver's plan is strictly positive (exp of reals)
  Var entropy = t.neg(t.sum_all(t.mul(plan, t.log(plan))));
  return t.sub(cost_term, t.scale(entropy, epsilon));
}

TransportPlan exact_oracle(const OTProblem& problem) {
  problem.validate();
  const size_t l = problem.cost.rows(), p = problem.cost.cols();
  if (l > 8 || p > 8) throw NumericError("exact_oracle instance too large");
  const Tensor gamma = clamp_renormalize(problem.supply);
  const Tensor beta = clamp_renormalize(problem.capacity);

  // plain-domain multiplicative scaling, independent of the log-domain path
  std::vector<double> kmat(l * p);
  for (size_t i = 0; i < l; ++i)
    for (size_t j = 0; j < p; ++j)
      kmat[i * p + j] = std::exp(-problem.cost(i, j) / problem.epsilon);

  std::vector<double> u(l, 1.0), v(p, 1.0);
  const size_t iters = 10000;
  for (size_t it = 0; it < iters; ++it) {
    for (size_t i = 0; i < l; ++i) {
      double s = 0.0;
      for (size_t j = 0; j < p; ++j) s += kmat[i * p + j] * v[j];
      u[i] = gamma.data[i] / s;
    }
    for (size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (size_t i = 0; i < l; ++i) s += kmat[i * p + j] * u[i];
      v[j] = beta.data[j] / s;
    }
  }

  TransportPlan out;
  out.plan = Tensor::zeros({l, p});
  out.kappa = Tensor::zeros({l});
  out.nu = Tensor::zeros({p});
  for (size_t i = 0; i < l; ++i)
    for (size_t j = 0; j < p; ++j) out.plan(i, j) = u[i] * kmat[i * p + j] * v[j];
  for (size_t i = 0; i < l; ++i) out.kappa.data[i] = std::log(u[i]);
  for (size_t j = 0; j < p; ++j) out.nu.data[j] = std::log(v[j]);
  auto [row_err, col_err] = marginal_error(out, problem);
  out.row_err = row_err;
  out.col_err = col_err;
  return out;
}

void export_csv(const TransportPlan& plan, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  const size_t l = plan.plan.rows(), p = plan.plan.cols();
  out.precision(17);
  for (size_t i = 0; i < l; ++i) {
    for (size_t j = 0; j < p; ++j) out << (j ? "," : "") << plan.plan(i, j);
    out << "\n";
  }
}

}  // namespace sota::ot
