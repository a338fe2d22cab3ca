// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "tspt/numcore/tensor.hpp"

namespace tspt {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// max_i |analytic_i - central_i| / (|analytic_i| + |central_i| + 1e-12)
/// for a scalar function of one tensor. NaN anywhere yields +inf.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps);

/// Same check over a set of parameter leaves read by `loss`. The leaves are
/// perturbed in place and restored. `stride` > 1 checks every stride-th
/// coordinate of each tensor.
GradCheckReport finite_diff_check_params(const std::function<Tensor()>& loss,
                                         std::vector<Tensor> params, double eps,
                                         std::size_t stride = 1);

}  // namespace tspt
