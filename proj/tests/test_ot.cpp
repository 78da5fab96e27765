// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sota/ot.hpp"
#include "sota/rng.hpp"
#include "sota/util.hpp"

using namespace sota;
using namespace sota::ot;

namespace {

Tensor random_simplex(Rng& rng, size_t n) {
  Tensor t = Tensor::zeros({n});
  double s = 0.0;
  for (auto& v : t.data) s += (v = rng.uniform(0.05, 1.0));
  for (auto& v : t.data) v /= s;
  return t;
}

Tensor random_cost(Rng& rng, size_t l, size_t p, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros({l, p});
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

Tensor outer(const Tensor& a, const Tensor& b) {
  Tensor t = Tensor::zeros({a.size(), b.size()});
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j) t(i, j) = a.data[i] * b.data[j];
  return t;
}

}  // namespace

TEST_CASE("zero cost gives the product coupling (uniform case)") {
  OTProblem pb;
  pb.cost = Tensor::zeros({3, 4});
  pb.supply = Tensor::full({3}, 1.0 / 3.0);
  pb.capacity = Tensor::full({4}, 0.25);
  pb.epsilon = 0.2;
  pb.iterations = 5;
  TransportPlan plan = sinkhorn_logdomain(pb);
  CHECK(max_abs_diff(plan.plan, Tensor::full({3, 4}, 1.0 / 12.0)) <= 1e-12);

  auto [row_err, col_err] = marginal_error(plan, pb);
  CHECK(row_err <= 1e-12);
  CHECK(col_err <= 1e-12);
}

TEST_CASE("single row is forced onto the capacity marginal") {
  Rng rng(1);
  OTProblem pb;
  pb.cost = random_cost(rng, 1, 5);
  pb.supply = Tensor::vec({1.0});
  pb.capacity = random_simplex(rng, 5);
  pb.iterations = 3;
  TransportPlan plan = sinkhorn_logdomain(pb);
  for (size_t j = 0; j < 5; ++j)
    CHECK(plan.plan(0, j) == doctest::Approx(pb.capacity.data[j]).epsilon(1e-12));
}

TEST_CASE("long-run solver matches the independent plain-domain oracle") {
  for (uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(100 + seed);
    OTProblem pb;
    pb.cost = random_cost(rng, 2, 3, -1.0, 0.0);
    pb.supply = random_simplex(rng, 2);
    pb.capacity = random_simplex(rng, 3);
    pb.epsilon = 0.2;
    pb.iterations = 1000;
    TransportPlan got = sinkhorn_logdomain(pb);
    TransportPlan ref = exact_oracle(pb);
    CHECK(max_abs_diff(got.plan, ref.plan) <= 1e-6);
  }
}

TEST_CASE("column marginals are exact after the final nu update") {
  // row errors at N_ot = 5 recorded from this solver on these seeds
  const double recorded_row_err[10] = {
      4.261266655696e-02, 9.850295938814e-03, 1.519486903855e-02, 1.700673499554e-02,
      2.002733424069e-02, 1.441971126779e-02, 3.712570670272e-02, 7.100561547094e-03,
      4.318454512604e-03, 2.033655197365e-02,
  };
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    OTProblem pb;
    pb.cost = random_cost(rng, 2, 49);
    pb.supply = random_simplex(rng, 2);
    pb.capacity = Tensor::full({49}, 1.0 / 49.0);
    pb.epsilon = 0.2;
    pb.iterations = 5;
    TransportPlan plan = sinkhorn_logdomain(pb);
    CHECK(plan.col_err <= 1e-9);
    CHECK(plan.row_err == doctest::Approx(recorded_row_err[trial]).epsilon(1e-6));
    CHECK(plan.row_err < 5e-2);
    for (double v : plan.plan.data) CHECK(v >= 0.0);
  }
}

TEST_CASE("row error shrinks with iterations and vanishes in the long run") {
  Rng rng(21);
  OTProblem pb;
  pb.cost = random_cost(rng, 3, 4);
  pb.supply = random_simplex(rng, 3);
  pb.capacity = random_simplex(rng, 4);
  pb.epsilon = 0.2;

  double prev = 1e9;
  for (size_t n : {1u, 2u, 5u, 20u, 100u, 1000u}) {
    pb.iterations = n;
    TransportPlan plan = sinkhorn_logdomain(pb);
    CHECK(plan.row_err <= prev + 1e-15);
    prev = plan.row_err;
  }
  CHECK(prev <= 1e-8);  // N_ot = 1000
}

TEST_CASE("entropic objective closed forms") {
  // uniform 1/12 plan on zero cost: objective = -eps * log(12)
  OTProblem pb;
  pb.cost = Tensor::zeros({3, 4});
  pb.supply = Tensor::full({3}, 1.0 / 3.0);
  pb.capacity = Tensor::full({4}, 0.25);
  pb.epsilon = 0.2;
  TransportPlan plan;
  plan.plan = Tensor::full({3, 4}, 1.0 / 12.0);
  CHECK(entropic_objective(plan, pb) ==
        doctest::Approx(-0.2 * std::log(12.0)).epsilon(1e-12));

  // 1x1: objective = C11, entropy of a point mass is 0
  OTProblem pb1;
  pb1.cost = Tensor::from_rows({{0.37}});
  pb1.supply = Tensor::vec({1.0});
  pb1.capacity = Tensor::vec({1.0});
  pb1.epsilon = 0.7;
  TransportPlan plan1;
  plan1.plan = Tensor::from_rows({{1.0}});
  CHECK(entropic_objective(plan1, pb1) == doctest::Approx(0.37).epsilon(1e-15));

  TransportPlan bad;
  bad.plan = Tensor::from_rows({{-0.1, 1.1}});
  OTProblem pb2;
  pb2.cost = Tensor::zeros({1, 2});
  pb2.supply = Tensor::vec({1.0});
  pb2.capacity = Tensor::full({2}, 0.5);
  CHECK_THROWS_AS(entropic_objective(bad, pb2), NumericError);
}

TEST_CASE("2x2 objective matches a 1-D grid search over feasible plans") {
  Rng rng(33);
  for (int trial = 0; trial < 5; ++trial) {
    OTProblem pb;
    pb.cost = random_cost(rng, 2, 2);
    pb.supply = random_simplex(rng, 2);
    pb.capacity = random_simplex(rng, 2);
    pb.epsilon = 0.3;
    pb.iterations = 3000;
    TransportPlan got = sinkhorn_logdomain(pb);
    const double got_obj = entropic_objective(got, pb);

    // one free parameter t = Pi_{00}
    const double g1 = pb.supply.data[0], b1 = pb.capacity.data[0];
    const double lo = std::max(0.0, b1 - (1.0 - g1));
    const double hi = std::min(g1, b1);
    double best = 1e100;
    const int steps = 200000;
    auto ent = [](double x) { return x > 0.0 ? -x * std::log(x) : 0.0; };
    for (int i = 0; i <= steps; ++i) {
      const double t = lo + (hi - lo) * static_cast<double>(i) / steps;
      const double p00 = t, p01 = g1 - t, p10 = b1 - t, p11 = 1.0 - g1 - b1 + t;
      if (p01 < 0 || p10 < 0 || p11 < 0) continue;
      const double obj = p00 * pb.cost(0, 0) + p01 * pb.cost(0, 1) + p10 * pb.cost(1, 0) +
                         p11 * pb.cost(1, 1) -
                         pb.epsilon * (ent(p00) + ent(p01) + ent(p10) + ent(p11));
      best = std::min(best, obj);
    }
    CHECK(got_obj == doctest::Approx(best).epsilon(1e-6));
    CHECK(got_obj >= best - 1e-6);  // no feasible plan does better
  }
}

TEST_CASE("constant cost yields the product coupling for random marginals") {
  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    OTProblem pb;
    pb.cost = Tensor::full({1 + rng.uniform_int(3), 1 + rng.uniform_int(4)},
                           rng.uniform(-1.0, 1.0));
    pb.supply = random_simplex(rng, pb.cost.rows());
    pb.capacity = random_simplex(rng, pb.cost.cols());
    pb.epsilon = rng.uniform(0.05, 2.0);
    pb.iterations = 5;
    TransportPlan plan = sinkhorn_logdomain(pb);
    CHECK(max_abs_diff(plan.plan, outer(pb.supply, pb.capacity)) <= 1e-9);
  }
}

TEST_CASE("plan approaches the product coupling monotonically as eps grows") {
  Rng rng(66);
  for (int trial = 0; trial < 4; ++trial) {
    OTProblem pb;
    pb.cost = random_cost(rng, 3, 3);
    pb.supply = random_simplex(rng, 3);
    pb.capacity = random_simplex(rng, 3);
    pb.iterations = 2000;
    const Tensor prod = outer(pb.supply, pb.capacity);
    double prev = 1e100;
    for (double eps : {0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 20.0}) {
      pb.epsilon = eps;
      TransportPlan plan = sinkhorn_logdomain(pb);
      const double dist = max_abs_diff(plan.plan, prod);
      CHECK(dist <= prev + 1e-12);
      prev = dist;
    }
    CHECK(prev <= 5e-3);  // eps = 20 is near the product coupling
  }
}

TEST_CASE("objective gradient through the unrolled solver matches finite differences") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    ParamStore ps;
    ps.add("cost", random_cost(rng, 2, 3));
    ps.add("supply_logits", random_cost(rng, 1, 2));
    const Tensor beta = random_simplex(rng, 3);

    auto fn = [&beta](Tape& t, ParamStore& p) {
      Var cost = t.param(p, "cost");
      Var supply = t.reshape(t.softmax_rows(t.param(p, "supply_logits")), {2});
      SinkhornVars sv = sinkhorn_logdomain_graph(t, cost, supply, beta, 0.2, 5);
      return entropic_objective_graph(t, sv.plan, cost, 0.2);
    };
    auto report = check_gradients(fn, ps, 1e-5, 1e-4);
    INFO("seed ", seed, " worst ", report.worst, " at ", report.worst_name);
    CHECK(report.pass);
  }
}

TEST_CASE("plan is reproducible from the returned duals") {
  Rng rng(88);
  OTProblem pb;
  pb.cost = random_cost(rng, 3, 4);
  pb.supply = random_simplex(rng, 3);
  pb.capacity = random_simplex(rng, 4);
  pb.epsilon = 0.2;
  pb.iterations = 7;
  TransportPlan plan = sinkhorn_logdomain(pb);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 4; ++j) {
      const double rebuilt =
          std::exp(plan.kappa.data[i] - pb.cost(i, j) / pb.epsilon + plan.nu.data[j]);
      CHECK(rebuilt == doctest::Approx(plan.plan(i, j)).epsilon(1e-12));
    }
}

TEST_CASE("degenerate marginals are clamped and renormalized, not fatal") {
  OTProblem pb;
  pb.cost = Tensor::zeros({2, 2});
  pb.supply = Tensor::vec({1.0, 0.0});  // zero entry
  pb.capacity = Tensor::full({2}, 0.5);
  pb.epsilon = 0.2;
  pb.iterations = 10;
  TransportPlan plan = sinkhorn_logdomain(pb);
  CHECK(plan.plan.finite());
  // nearly all mass in the first row
  CHECK(plan.plan(0, 0) + plan.plan(0, 1) == doctest::Approx(1.0).epsilon(1e-9));

  OTProblem bad = pb;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(sinkhorn_logdomain(bad), NumericError);
}
