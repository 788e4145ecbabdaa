#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "modaladapt/optim.hpp"

namespace modaladapt {

struct GradCheckEntry {
  std::string param_id;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  std::size_t entries_checked = 0;
  double step = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error <= tolerance; }
};

// Central-difference check of analytic gradients. `loss_fn` must be a pure,
// deterministic function of the current parameter values; every entry named
// in `analytic` is perturbed in place and restored. The relative error uses
// max(1, |analytic|, |numeric|) as denominator so near-zero gradients are
// compared absolutely.
template <class LossFn>
GradCheckReport finite_difference_check(LossFn&& loss_fn, const std::vector<ParamRef>& params,
                                        const GradientSet& analytic, double step = 1e-5,
                                        double tolerance = 1e-4) {
  GradCheckReport report;
  report.step = step;
  report.tolerance = tolerance;
  for (const auto& [id, grad] : analytic) {
    const ParamRef* param = nullptr;
    for (const auto& p : params) {
      if (p.id == id) {
        param = &p;
        break;
      }
    }
    if (param == nullptr) {
      throw std::invalid_argument("finite_difference_check: no parameter named '" + id + "'");
    }
    if (param->size != grad.size()) {
      throw std::invalid_argument("finite_difference_check: gradient size mismatch for '" + id +
                                  "'");
    }
    for (std::size_t i = 0; i < param->size; ++i) {
      const double saved = param->data[i];
      param->data[i] = saved + step;
      const double up = loss_fn();
      param->data[i] = saved - step;
      const double down = loss_fn();
      param->data[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({1.0, std::abs(numeric), std::abs(grad[i])});
      const double rel = std::abs(numeric - grad[i]) / denom;
      ++report.entries_checked;
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = GradCheckEntry{id, i, grad[i], numeric, rel};
      }
    }
  }
  return report;
}

}  // namespace modaladapt
