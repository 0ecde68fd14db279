#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nda/errors.hpp"
#include "nda/graph.hpp"
#include "nda/tensor.hpp"

namespace nda {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // (parameter index, coordinate) pairs excluded for sitting on a kink
  std::vector<std::pair<std::size_t, std::size_t>> skipped;

  bool passes(double tolerance) const { return checked > 0 && max_rel_error <= tolerance; }
};

/// Central-finite-difference check of the analytic gradient.
///
/// `build` reconstructs the scalar loss on a fresh graph from the current
/// parameter values; it is invoked once for the analytic pass and twice per
/// coordinate for the numeric one. Coordinates whose perturbed passes bring a
/// relu input within `kink_tol` of zero (or a sqrt input near zero, where the
/// derivative blows up) are excluded and reported in `skipped`.
///
/// Relative error per coordinate is |analytic - numeric| / max(1, |numeric|).
inline GradCheckResult gradient_check(const std::function<NodeId(Graph&)>& build,
                                      const std::vector<Tensor*>& params, double step,
                                      double kink_tol = 1e-4) {
  if (!(step > 0.0) || step > 1e-3)
    throw ContractError("gradient_check: step must be in (0, 1e-3], got " + std::to_string(step));
  const double sqrt_guard = 1e-2;

  Graph base;
  NodeId loss = build(base);
  base.backward(loss);
  const bool base_kink =
      base.min_abs_relu_input() < kink_tol || base.min_sqrt_input() < sqrt_guard;

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const Tensor* p : params) analytic.push_back(base.grad_for(*p));

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    for (std::size_t ci = 0; ci < p.size(); ++ci) {
      const double saved = p.data[ci];
      bool kink = base_kink;

      p.data[ci] = saved + step;
      Graph gp;
      const double f_plus = gp.value(build(gp)).item();
      kink = kink || gp.min_abs_relu_input() < kink_tol || gp.min_sqrt_input() < sqrt_guard;

      p.data[ci] = saved - step;
      Graph gm;
      const double f_minus = gm.value(build(gm)).item();
      kink = kink || gm.min_abs_relu_input() < kink_tol || gm.min_sqrt_input() < sqrt_guard;

      p.data[ci] = saved;

      if (kink) {
        result.skipped.emplace_back(pi, ci);
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double exact = analytic[pi].data[ci];
      if (!std::isfinite(exact) || !std::isfinite(numeric))
        throw NumericError("gradient_check: non-finite gradient at param " + std::to_string(pi) +
                           " coord " + std::to_string(ci));
      const double rel = std::fabs(exact - numeric) / std::max(1.0, std::fabs(numeric));
      result.max_rel_error = std::max(result.max_rel_error, rel);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace nda
