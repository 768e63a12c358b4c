#include "semfuse/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "semfuse/errors.hpp"

namespace semfuse {

double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

template <typename Real>
GradCheckResult grad_check(const ScalarObjective<Real>& objective,
                           std::span<Parameter<Real>* const> params, double h,
                           int coords, Rng& rng) {
  auto evaluate = [&objective] {
    Graph<Real> g;
    const Var out = objective(g);
    return static_cast<double>(g.value(out)[0]);
  };

  for (auto* p : params) p->zero_grad();
  {
    Graph<Real> g;
    const Var out = objective(g);
    if (!std::isfinite(static_cast<double>(g.value(out)[0]))) {
      throw NumericError("grad_check: objective is not finite at the base point");
    }
    g.backward(out);
  }

  // (parameter, element) pairs; sampled without replacement.
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t k = 0; k < params[pi]->value.size(); ++k) {
      all.emplace_back(pi, k);
    }
  }
  if (static_cast<int>(all.size()) > coords) {
    for (int i = 0; i < coords; ++i) {
      const auto j = static_cast<std::size_t>(i) +
                     rng.uniform_below(all.size() - static_cast<std::size_t>(i));
      std::swap(all[static_cast<std::size_t>(i)], all[j]);
    }
    all.resize(static_cast<std::size_t>(coords));
  }

  GradCheckResult result;
  for (const auto& [pi, k] : all) {
    Parameter<Real>& p = *params[pi];
    const Real saved = p.value[k];
    p.value[k] = static_cast<Real>(saved + h);
    const double plus = evaluate();
    p.value[k] = static_cast<Real>(saved - h);
    const double minus = evaluate();
    p.value[k] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double analytic = static_cast<double>(p.grad[k]);
    if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
      throw NumericError("grad_check: non-finite value at " + p.name + "[" +
                         std::to_string(k) + "]");
    }
    const double err = relative_error(analytic, numeric);
    ++result.coords_checked;
    if (err > result.max_rel_error || result.coords_checked == 1) {
      result.max_rel_error = err;
      result.worst_param = p.name;
      result.worst_index = k;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

template GradCheckResult grad_check<float>(const ScalarObjective<float>&,
                                           std::span<Parameter<float>* const>,
                                           double, int, Rng&);
template GradCheckResult grad_check<double>(
    const ScalarObjective<double>&, std::span<Parameter<double>* const>,
    double, int, Rng&);

}  // namespace semfuse
