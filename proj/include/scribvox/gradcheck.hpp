#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scribvox/error.hpp"

namespace scribvox {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central-difference check of an analytic gradient. The callable evaluates
// the objective at x and, when grad is non-null, fills it. Relative error is
// measured against max(|fd|, |analytic|, 1e-8); entries the objective never
// reads come out bitwise zero on both sides and cost nothing.
// probe_stride > 1 checks a deterministic subset of indices.
inline GradCheckReport gradcheck(
    const std::function<double(std::span<const double>, std::span<double>)>& f,
    std::vector<double> x, double eps = 1e-5, std::size_t probe_stride = 1) {
  if (!(eps > 0.0)) throw std::invalid_argument("gradcheck: eps must be > 0");
  if (probe_stride == 0) probe_stride = 1;

  std::vector<double> analytic(x.size(), 0.0);
  double base = f(x, analytic);
  if (!std::isfinite(base))
    throw NumericalError("gradcheck: non-finite loss at base point");

  GradCheckReport rep;
  for (std::size_t i = 0; i < x.size(); i += probe_stride) {
    double keep = x[i];
    x[i] = keep + eps;
    double hi = f(x, {});
    x[i] = keep - eps;
    double lo = f(x, {});
    x[i] = keep;
    if (!std::isfinite(hi) || !std::isfinite(lo))
      throw NumericalError("gradcheck: non-finite loss at probe " +
                           std::to_string(i));
    double fd = (hi - lo) / (2.0 * eps);
    double abs_err = std::abs(fd - analytic[i]);
    double rel_err =
        abs_err / std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
    if (rel_err > rep.max_rel_error) {
      rep.max_rel_error = rel_err;
      rep.worst_index = i;
    }
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
    ++rep.checked;
  }
  return rep;
}

}  // namespace scribvox
