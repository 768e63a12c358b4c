#pragma once

#include <functional>
#include <span>
#include <string>

#include "semfuse/graph.hpp"
#include "semfuse/rng.hpp"

namespace semfuse {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int coords_checked = 0;
  // Coordinate with the largest relative error.
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Builds a scalar objective on a fresh graph.
template <typename Real>
using ScalarObjective = std::function<Var(Graph<Real>&)>;

// Compares reverse-mode gradients of `objective` with central differences
// (f(x + h) - f(x - h)) / 2h on `coords` randomly chosen coordinates (all of
// them when fewer exist). The objective must be deterministic. Throws
// NumericError, naming the coordinate, when a value is not finite.
template <typename Real>
GradCheckResult grad_check(const ScalarObjective<Real>& objective,
                           std::span<Parameter<Real>* const> params, double h,
                           int coords, Rng& rng);

extern template GradCheckResult grad_check<float>(
    const ScalarObjective<float>&, std::span<Parameter<float>* const>, double,
    int, Rng&);
extern template GradCheckResult grad_check<double>(
    const ScalarObjective<double>&, std::span<Parameter<double>* const>,
    double, int, Rng&);

}  // namespace semfuse
