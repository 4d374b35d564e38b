#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmrec/error.hpp"
#include "mmrec/numerics/tape.hpp"

namespace mmrec {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
  bool passed = true;
};

/// Compares reverse-mode gradients of `loss_fn` (Tape<double>& -> 1x1 Var)
/// against central differences (f(θ+h) - f(θ-h)) / 2h over every entry of
/// `params`. Relative error per coordinate is |a - n| / max(|a|, |n|, floor).
/// Round-off in f leaves about 1e-9 of noise in each difference quotient at
/// h = 1e-5, so gradients below the floor are held to an absolute bound of
/// tol * floor instead.
template <class LossFn>
GradCheckReport grad_check(LossFn&& loss_fn, const std::vector<Tensor<double>*>& params,
                           double h = 1e-5, double tol = 1e-4, double floor = 1e-4) {
  auto evaluate = [&](bool with_grad) {
    Tape<double> tape(with_grad);
    Var<double> loss = loss_fn(tape);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) throw NumericError("grad_check: loss is not finite");
    if (with_grad) tape.backward(loss);
    return value;
  };

  for (Tensor<double>* p : params) p->zero_grad();
  evaluate(true);

  GradCheckReport report;
  for (Tensor<double>* p : params) {
    for (Eigen::Index i = 0; i < p->data.size(); ++i) {
      double& x = p->data.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = evaluate(false);
      x = saved - h;
      const double down = evaluate(false);
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad.size() == 0 ? 0.0 : p->grad.data()[i];
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      report.max_rel_error = std::max(report.max_rel_error, abs_err / denom);
      report.analytic.push_back(analytic);
      report.numeric.push_back(numeric);
      ++report.coordinates;
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace mmrec
