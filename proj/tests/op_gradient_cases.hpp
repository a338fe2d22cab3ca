// SPDX-License-Identifier: Apache-2.0
#pragma once

// Finite-difference checks for every differentiable numcore op, shared by
// the unit suite and the acceptance runner.

#include <functional>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "tspt/numcore/gradcheck.hpp"
#include "tspt/numcore/ops.hpp"

namespace tspt::testing {

struct OpGradCase {
  std::string name;
  // Returns the max relative error over all differentiable inputs.
  std::function<double()> run;
};

// Weighted sum so that every output coordinate carries a distinct
// sensitivity (plain sum would make softmax's gradient identically zero).
inline Tensor probe(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  auto w = random_tensor(rng, out.shape(), -1.0, 1.0);
  return ops::sum(ops::mul(out, w));
}

inline double check_inputs(std::function<Tensor(const std::vector<Tensor>&)> f,
                           std::vector<Tensor> inputs, std::uint64_t seed) {
  std::vector<Tensor> leaves;
  for (auto& t : inputs) leaves.push_back(Tensor::from(t.shape(), t.to_vector(), true));
  auto report = finite_diff_check_params(
      [&] { return probe(f(leaves), seed); }, leaves, 1e-5);
  return report.max_relative_error;
}

inline std::vector<OpGradCase> op_gradient_cases(std::uint64_t seed) {
  using V = std::vector<Tensor>;
  std::vector<OpGradCase> cases;
  auto add_case = [&](std::string name, std::function<Tensor(const V&)> f,
                      std::vector<Shape> shapes, double lo = -2.0, double hi = 2.0) {
    cases.push_back({name, [=] {
                       Rng rng(seed ^ std::hash<std::string>{}(name));
                       V in;
                       for (const auto& s : shapes) in.push_back(random_tensor(rng, s, lo, hi));
                       return check_inputs(f, in, seed + 1);
                     }});
  };
  add_case("add", [](const V& v) { return ops::add(v[0], v[1]); }, {{3, 4}, {3, 4}});
  add_case("sub", [](const V& v) { return ops::sub(v[0], v[1]); }, {{3, 4}, {3, 4}});
  add_case("mul", [](const V& v) { return ops::mul(v[0], v[1]); }, {{3, 4}, {3, 4}});
  add_case("scale", [](const V& v) { return ops::scale(v[0], -1.7); }, {{5}});
  add_case("add_scalar", [](const V& v) { return ops::add_scalar(v[0], v[1]); }, {{2, 3}, {1}});
  add_case("mul_scalar", [](const V& v) { return ops::mul_scalar(v[0], v[1]); }, {{2, 3}, {1}});
  add_case("add_rowvec", [](const V& v) { return ops::add_rowvec(v[0], v[1]); }, {{4, 3}, {3}});
  add_case("mul_rowvec", [](const V& v) { return ops::mul_rowvec(v[0], v[1]); }, {{4, 3}, {3}});
  add_case("mul_colvec", [](const V& v) { return ops::mul_colvec(v[0], v[1]); }, {{4, 3}, {4, 1}});
  add_case("matmul", [](const V& v) { return ops::matmul(v[0], v[1]); }, {{3, 4}, {4, 5}});
  add_case("matmul_nt", [](const V& v) { return ops::matmul_nt(v[0], v[1]); }, {{3, 4}, {5, 4}});
  add_case("transpose", [](const V& v) { return ops::transpose(v[0]); }, {{3, 4}});
  add_case("concat0", [](const V& v) { return ops::concat({v[0], v[1]}, 0); }, {{2, 3}, {4, 3}});
  add_case("concat1", [](const V& v) { return ops::concat({v[0], v[1]}, 1); }, {{2, 3}, {2, 2}});
  add_case("slice0", [](const V& v) { return ops::slice(v[0], 0, 1, 3); }, {{5, 2}});
  add_case("slice1", [](const V& v) { return ops::slice(v[0], 1, 2, 2); }, {{3, 5}});
  add_case("take_rows", [](const V& v) {
    std::vector<std::size_t> rows{2, 0, 2};
    return ops::take_rows(v[0], rows);
  }, {{3, 4}});
  add_case("reshape", [](const V& v) { return ops::reshape(v[0], {6}); }, {{2, 3}});
  add_case("sum", [](const V& v) { return ops::scale(ops::sum(v[0]), 0.3); }, {{3, 3}});
  add_case("mean", [](const V& v) { return ops::mean(v[0]); }, {{3, 3}});
  add_case("sum_rows", [](const V& v) { return ops::sum_rows(v[0]); }, {{4, 3}});
  add_case("exp", [](const V& v) { return ops::exp(v[0]); }, {{3, 3}});
  add_case("log", [](const V& v) { return ops::log(v[0]); }, {{3, 3}}, 0.2, 2.0);
  add_case("tanh", [](const V& v) { return ops::tanh(v[0]); }, {{3, 3}});
  add_case("sigmoid", [](const V& v) { return ops::sigmoid(v[0]); }, {{3, 3}});
  add_case("gelu", [](const V& v) { return ops::gelu(v[0]); }, {{3, 3}});
  add_case("softmax", [](const V& v) { return ops::softmax(v[0]); }, {{3, 5}});
  add_case("log_softmax", [](const V& v) { return ops::log_softmax(v[0]); }, {{3, 5}});
  add_case("row_mean", [](const V& v) { return ops::row_mean(v[0]); }, {{3, 5}});
  add_case("row_std", [](const V& v) { return ops::row_std(v[0], 1e-5); }, {{3, 5}});
  add_case("normalize_rows", [](const V& v) { return ops::normalize_rows(v[0], 1e-5); }, {{3, 5}});
  add_case("layer_norm", [](const V& v) { return ops::layer_norm(v[0], v[1], v[2], 1e-5); },
           {{3, 5}, {5}, {5}});
  add_case("lookup", [](const V& v) {
    std::vector<std::size_t> idx{0, 3, 3, 1, 2, 0};
    return ops::lookup(v[0], idx, {2, 3});
  }, {{4}});
  add_case("pick", [](const V& v) {
    std::vector<std::size_t> idx{1, 0, 3};
    return ops::pick(v[0], idx);
  }, {{3, 4}});
  add_case("conv1d", [](const V& v) {
    return ops::conv1d(v[0], v[1], v[2], {.stride = 2, .pad_left = 1, .pad_right = 2, .groups = 1});
  }, {{9, 2}, {3, 2, 3}, {3}});
  add_case("conv1d_grouped", [](const V& v) {
    return ops::conv1d(v[0], v[1], v[2], {.stride = 1, .pad_left = 2, .pad_right = 2, .groups = 2});
  }, {{7, 4}, {4, 2, 5}, {4}});
  return cases;
}

}  // namespace tspt::testing
