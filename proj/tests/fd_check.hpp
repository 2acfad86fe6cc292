#pragma once

// Central finite-difference gradient oracle. Probes run through a caller
// supplied double-precision reference forward (independent of the graph
// implementation), so the f32 tape's analytic gradients are checked against
// a numerically clean derivative.

#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "pairdiff/adam.hpp"

namespace fd {

using DParams = std::vector<std::vector<double>>;

inline DParams to_double(const pairdiff::nd::ParamStore& store) {
  DParams out(store.values.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i].assign(store.values[i].data.begin(), store.values[i].data.end());
  }
  return out;
}

// loss_ref: f64 loss at the given parameter values. analytic: per-parameter
// gradients from the tape (empty tensor = zero). Checks a strided subset of
// at most max_probes coordinates.
inline void check_gradients(const pairdiff::nd::ParamStore& store,
                            const std::function<double(const DParams&)>& loss_ref,
                            const std::vector<pairdiff::nd::Tensor>& analytic, int max_probes = 200,
                            double h = 1e-3, double rel_tol = 1e-2, double abs_floor = 1e-6) {
  REQUIRE(analytic.size() == store.values.size());
  DParams params = to_double(store);

  int64_t total = store.total_scalars();
  int64_t stride = total <= max_probes ? 1 : (total + max_probes - 1) / max_probes;

  int64_t flat = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (size_t j = 0; j < params[pi].size(); ++j, ++flat) {
      if (flat % stride != 0) continue;
      const double saved = params[pi][j];
      params[pi][j] = saved + h;
      const double lp = loss_ref(params);
      params[pi][j] = saved - h;
      const double lm = loss_ref(params);
      params[pi][j] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[pi].empty() ? 0.0 : static_cast<double>(analytic[pi][static_cast<int64_t>(j)]);
      INFO("param ", store.names[pi], " [", j, "]: analytic=", a, " numeric=", numeric);
      if (std::abs(a) < abs_floor) {
        CHECK(std::abs(numeric) < 10 * abs_floor);
      } else {
        CHECK(std::abs(numeric - a) / std::max(std::abs(a), std::abs(numeric)) < rel_tol);
      }
    }
  }
}

}  // namespace fd
