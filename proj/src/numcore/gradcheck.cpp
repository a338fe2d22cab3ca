// SPDX-License-Identifier: Apache-2.0
#include "tspt/numcore/gradcheck.hpp"

#include <cmath>
#include <limits>

#include "tspt/error.hpp"

namespace tspt {

namespace {

double relative_error(double analytic, double numeric) {
  if (std::isnan(analytic) || std::isnan(numeric)) {
    return std::numeric_limits<double>::infinity();
  }
  return std::abs(analytic - numeric) /
         (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

}  // namespace

GradCheckReport finite_diff_check_params(const std::function<Tensor()>& loss,
                                         std::vector<Tensor> params, double eps,
                                         std::size_t stride) {
  if (stride == 0) stride = 1;
  GradCheckReport report;
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  try {
    loss().backward();
    for (auto& p : params) analytic.push_back(p.grad());
  } catch (const NumericalError&) {
    report.max_relative_error = std::numeric_limits<double>::infinity();
    return report;
  }

  NoGradGuard no_grad;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto values = params[t].mutable_data();
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double orig = values[i];
      double plus = 0.0, minus = 0.0;
      try {
        values[i] = orig + eps;
        plus = loss().item();
        values[i] = orig - eps;
        minus = loss().item();
      } catch (const NumericalError&) {
        plus = minus = std::numeric_limits<double>::quiet_NaN();
      }
      values[i] = orig;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = relative_error(analytic[t][i], numeric);
      ++report.coordinates;
      if (err > report.max_relative_error || std::isnan(err)) {
        report.max_relative_error = err;
        report.worst_tensor = t;
        report.worst_index = i;
        report.worst_analytic = analytic[t][i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps) {
  Tensor leaf = Tensor::from(x.shape(), x.to_vector(), true);
  return finite_diff_check_params([&] { return f(leaf); }, {leaf}, eps)
      .max_relative_error;
}

}  // namespace tspt
