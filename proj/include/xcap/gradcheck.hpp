#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xcap/tensor.hpp"
#include "xcap/util.hpp"

namespace xcap {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
};

// Central finite-difference audit of analytic gradients. `params` are the
// live tensors the loss reads; `loss_fn` re-evaluates the loss at the current
// parameter values (it must be deterministic); `analytic` holds the gradients
// under audit, keyed the same as `params`, possibly at a narrower precision
// than Real. The differencing runs at precision Real: long double keeps the
// finite-difference noise floor below the 1e-8 relative-error denominator so
// near-zero gradients can still be audited meaningfully. Report-only: never
// throws on disagreement.
template <typename Real, typename GradReal = Real>
GradCheckReport check_gradients(
    const std::vector<std::pair<std::string, Tensor<Real>*>>& params,
    const std::function<Real()>& loss_fn,
    const std::map<std::string, Tensor<GradReal>>& analytic, double eps) {
  check(eps > 0.0, "check_gradients: eps must be positive");
  GradCheckReport report;
  for (const auto& [name, tensor] : params) {
    auto it = analytic.find(name);
    check(it != analytic.end(), "check_gradients: no analytic gradient for '",
          name, "'");
    const Tensor<GradReal>& grad = it->second;
    check(grad.size() == tensor->size(),
          "check_gradients: gradient size mismatch for '", name, "'");
    GradCheckEntry entry;
    entry.name = name;
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      const Real saved = (*tensor)[i];
      (*tensor)[i] = saved + static_cast<Real>(eps);
      const Real up = loss_fn();
      (*tensor)[i] = saved - static_cast<Real>(eps);
      const Real down = loss_fn();
      (*tensor)[i] = saved;
      const double numeric =
          static_cast<double>((up - down) / (Real(2) * static_cast<Real>(eps)));
      const double analytic_v = static_cast<double>(grad[i]);
      const double denom =
          std::max({std::abs(analytic_v), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic_v - numeric) / denom;
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
        entry.analytic_at_worst = analytic_v;
        entry.numeric_at_worst = numeric;
      }
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace xcap
