#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "topiq/tensor.hpp"

namespace topiq {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;  // largest analytic gradient magnitude
  bool frozen = false;        // no gradient slot; finite differences skipped
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, elementwise, over every listed parameter.
///
/// `f` must rebuild its graph from the current parameter values on every
/// call. Relative error uses the denominator max(|a|, |b|, 1e-8).
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                                  std::vector<NamedTensor<double>> params, double eps = 1e-6,
                                  double tolerance = 1e-4) {
  auto finite_or_throw = [](double v, const std::string& where) {
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite value at " + where);
    return v;
  };

  for (auto& p : params) p.tensor.zero_grad();
  {
    Tensor<double> root = f();
    finite_or_throw(root.item(), "base point");
    backward(root);
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto& p : params) {
    GradCheckEntry entry;
    entry.name = p.name;
    if (!p.tensor.requires_grad()) {
      entry.frozen = true;
      report.entries.push_back(entry);
      continue;
    }
    std::vector<double> analytic(p.tensor.numel(), 0.0);
    if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());

    NoGradGuard no_grad;
    auto values = p.tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = finite_or_throw(f().item(), p.name + "[" + std::to_string(i) + "]+eps");
      values[i] = saved - eps;
      const double down = finite_or_throw(f().item(), p.name + "[" + std::to_string(i) + "]-eps");
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
      entry.max_abs_grad = std::max(entry.max_abs_grad, std::abs(a));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(entry);
  }
  report.pass = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace topiq
