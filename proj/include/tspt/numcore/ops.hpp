// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tspt/numcore/tensor.hpp"

// Differentiable operations. Unless stated otherwise operands must have
// identical shapes; matrix operations take rank-2 tensors laid out as
// (rows, cols). Every result is checked for NaN/Inf.

namespace tspt::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
/// a + s, s a one-element tensor.
Tensor add_scalar(const Tensor& a, const Tensor& s);
/// a * s, s a one-element tensor.
Tensor mul_scalar(const Tensor& a, const Tensor& s);

/// X (n, d) + v (d), v added to every row.
Tensor add_rowvec(const Tensor& x, const Tensor& v);
/// X (n, d) * v (d), every row scaled elementwise by v.
Tensor mul_rowvec(const Tensor& x, const Tensor& v);
/// X (n, d) * c (n, 1), row r scaled by c[r].
Tensor mul_colvec(const Tensor& x, const Tensor& c);

/// (n, k) x (k, m) -> (n, m).
Tensor matmul(const Tensor& a, const Tensor& b);
/// (n, k) x (m, k)^T -> (n, m).
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Concatenation along axis 0 or 1 of rank-2 tensors, or axis 0 of rank-1.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// parts[axis] in [start, start + length).
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t length);
/// Rows of a rank-2 tensor in the given order.
Tensor take_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column sums of (n, d) -> (d).
Tensor sum_rows(const Tensor& a);

Tensor exp(const Tensor& a);
/// Natural log; every entry must be strictly positive.
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& a);

/// Row-wise softmax of a rank-2 tensor (or the single row of a rank-1 one).
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

/// Per-row mean of (n, d) -> (n, 1).
Tensor row_mean(const Tensor& a);
/// Per-row population std sqrt(var + eps) of (n, d) -> (n, 1).
Tensor row_std(const Tensor& a, double eps);
/// (X - mean) / sqrt(var + eps) per row.
Tensor normalize_rows(const Tensor& a, double eps);
/// normalize_rows(x) * gamma + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps);

/// out[i] = table[indices[i]], result reshaped to `shape`.
Tensor lookup(const Tensor& table, std::span<const std::size_t> indices,
              Shape shape);
/// out[r] = a[r, index[r]] -> (n).
Tensor pick(const Tensor& a, std::span<const std::size_t> index);

struct Conv1dSpec {
  std::size_t stride = 1;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;
  std::size_t groups = 1;
};

/// Frame-major 1-D convolution.
/// x: (T, C_in); weight: (C_out, C_in / groups, K); bias: (C_out) or
/// undefined. Output: (1 + (T + pads - K) / stride, C_out).
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv1dSpec& spec);

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel,
                                 const Conv1dSpec& spec);

}  // namespace tspt::ops

namespace tspt::ops {

/// Wraps an externally computed result as a graph node. `backward` runs
/// with the output node; its parents are `inputs` in order.
Tensor custom(const char* name, Shape shape, std::vector<double> values,
              const std::vector<Tensor>& inputs,
              std::function<void(detail::Node&)> backward);

}  // namespace tspt::ops
