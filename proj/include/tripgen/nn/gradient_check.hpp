#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tripgen/nn/autodiff.hpp"

namespace tripgen::nn {

struct GradientCheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double relative_error = 0;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> worst_per_parameter;
  double max_relative_error = 0;
  std::size_t checked = 0;
};

/// Compares Parameter::grad (already populated by a backward pass) against
/// central differences of `loss`. Relative error is
/// |a - n| / max(|a|, |n|, floor * max(1, |L|)) with L the loss at the
/// current point. Central-difference roundoff is about eps * |L| / h, so the
/// floor scales with the loss to stay above what the difference can resolve.
inline GradientCheckReport gradient_check(ParameterSet& params, const std::function<double()>& loss, double h = 1e-5,
                                          double floor = 1e-6) {
  GradientCheckReport report;
  const double denom_floor = floor * std::max(1.0, std::abs(loss()));
  for (auto& p : params) {
    GradientCheckEntry worst{p.name};
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double orig = p.value[k];
      p.value[k] = orig + h;
      const double up = loss();
      p.value[k] = orig - h;
      const double down = loss();
      p.value[k] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.grad[k];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), denom_floor});
      ++report.checked;
      if (rel >= worst.relative_error) worst = {p.name, k, analytic, numeric, rel};
    }
    report.max_relative_error = std::max(report.max_relative_error, worst.relative_error);
    report.worst_per_parameter.push_back(worst);
  }
  return report;
}

}  // namespace tripgen::nn
