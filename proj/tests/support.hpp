#pragma once

// Shared test helpers. Gradient checks run the graph in double precision and
// compare analytic grads against central finite differences.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "kdoct/graph.hpp"
#include "kdoct/tensor.hpp"

namespace kdoct::test {

using DTensor = kdoct::TensorT<double>;
using DGraph = kdoct::GraphT<double>;

// forward: builds the loss (scalar tensor) from the captured params on the
// given graph. Called once recording for analytic grads, then repeatedly
// non-recording for the finite-difference probes.
inline void gradcheck(std::vector<DTensor> params,
                      const std::function<DTensor(DGraph&)>& forward, double step = 1e-3,
                      double rel_tol = 1e-3, double abs_tol = 1e-6) {
  for (auto& p : params) p.set_requires_grad(true);

  DGraph g;
  DTensor loss = forward(g);
  g.backward(loss);

  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    REQUIRE(p.has_grad());
    analytic.emplace_back(p.grad().begin(), p.grad().end());
    p.zero_grad();
  }

  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto vals = params[pi].values();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + step;
      DGraph gp(false);
      const double lp = forward(gp).item();
      vals[i] = saved - step;
      DGraph gm(false);
      const double lm = forward(gm).item();
      vals[i] = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      const double a = analytic[pi][i];
      const double bound = rel_tol * std::max(std::abs(a), std::abs(numeric)) + abs_tol;
      INFO("param ", pi, " index ", i, ": analytic ", a, " numeric ", numeric);
      CHECK(std::abs(a - numeric) <= bound);
    }
  }
}

inline bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

inline void check_close(std::span<const double> got, const std::vector<double>& want,
                        double tol = 1e-9) {
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < want.size(); ++i) {
    INFO("index ", i, ": got ", got[i], " want ", want[i]);
    CHECK(close(got[i], want[i], tol));
  }
}

}  // namespace kdoct::test
