// SPDX-License-Identifier: Apache-2.0
#include "tspt/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "tspt/error.hpp"

namespace tspt::ops {

namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

void check_finite(const char* name, const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite value produced by ") + name);
    }
  }
}

Tensor record(const char* name, Shape shape, std::vector<double> values,
              const std::vector<Tensor>& inputs, BackwardFn backward) {
  check_finite(name, values);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->op = name;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) needs = needs || (t.defined() && t.requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& t : inputs) {
      node->parents.push_back(t.defined() ? t.node() : std::make_shared<Node>());
    }
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// Gradient buffer of parent i, or nullptr if it does not need one.
std::vector<double>* pgrad(Node& out, std::size_t i) {
  auto& p = out.parents[i];
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

const std::vector<double>& pdata(Node& out, std::size_t i) {
  return out.parents[i]->data;
}

void require_same(const char* name, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(name) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* name, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(name) + ": expected rank " +
                     std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

void require_scalar(const char* name, const Tensor& s) {
  if (s.numel() != 1) {
    throw ShapeError(std::string(name) + ": expected one-element tensor, got " +
                     shape_str(s.shape()));
  }
}

// rows, cols of a rank-1 (treated as one row) or rank-2 tensor
std::pair<std::size_t, std::size_t> as_matrix(const char* name,
                                              const Tensor& a) {
  if (a.rank() == 1) return {1, a.dim(0)};
  if (a.rank() == 2) return {a.dim(0), a.dim(1)};
  throw ShapeError(std::string(name) + ": expected rank 1 or 2, got " +
                   shape_str(a.shape()));
}

template <class F, class D>
Tensor unary(const char* name, const Tensor& a, F f, D dfdx) {
  const auto& x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return record(name, a.shape(), std::move(y), {a}, [dfdx](Node& out) {
    auto* g = pgrad(out, 0);
    if (!g) return;
    const auto& x = pdata(out, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      (*g)[i] += out.grad[i] * dfdx(x[i], out.data[i]);
    }
  });
}

}  // namespace

Tensor custom(const char* name, Shape shape, std::vector<double> values,
              const std::vector<Tensor>& inputs,
              std::function<void(detail::Node&)> backward) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError(std::string(name) + ": value count does not match shape");
  }
  return record(name, std::move(shape), std::move(values), inputs,
                std::move(backward));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  auto x = a.to_vector();
  const auto& y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
  return record("add", a.shape(), std::move(x), {a, b}, [](Node& out) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = pgrad(out, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  auto x = a.to_vector();
  const auto& y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] -= y[i];
  return record("sub", a.shape(), std::move(x), {a, b}, [](Node& out) {
    if (auto* g = pgrad(out, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
    }
    if (auto* g = pgrad(out, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= out.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  auto x = a.to_vector();
  const auto& y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= y[i];
  return record("mul", a.shape(), std::move(x), {a, b}, [](Node& out) {
    const auto& x = pdata(out, 0);
    const auto& y = pdata(out, 1);
    if (auto* g = pgrad(out, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * y[i];
    }
    if (auto* g = pgrad(out, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * x[i];
    }
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
  auto x = a.to_vector();
  for (auto& v : x) v *= factor;
  return record("scale", a.shape(), std::move(x), {a}, [factor](Node& out) {
    if (auto* g = pgrad(out, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * factor;
    }
  });
}

Tensor add_scalar(const Tensor& a, const Tensor& s) {
  require_scalar("add_scalar", s);
  auto x = a.to_vector();
  const double c = s.data()[0];
  for (auto& v : x) v += c;
  return record("add_scalar", a.shape(), std::move(x), {a, s}, [](Node& out) {
    if (auto* g = pgrad(out, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
    }
    if (auto* g = pgrad(out, 1)) {
      double acc = 0.0;
      for (double v : out.grad) acc += v;
      (*g)[0] += acc;
    }
  });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  require_scalar("mul_scalar", s);
  auto x = a.to_vector();
  const double c = s.data()[0];
  for (auto& v : x) v *= c;
  return record("mul_scalar", a.shape(), std::move(x), {a, s}, [](Node& out) {
    const auto& x = pdata(out, 0);
    const double c = pdata(out, 1)[0];
    if (auto* g = pgrad(out, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * c;
    }
    if (auto* g = pgrad(out, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += out.grad[i] * x[i];
      (*g)[0] += acc;
    }
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require_rank("add_rowvec", x, 2);
  require_rank("add_rowvec", v, 1);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (v.dim(0) != d) {
    throw ShapeError("add_rowvec: " + shape_str(x.shape()) + " + " +
                     shape_str(v.shape()));
  }
  auto y = x.to_vector();
  const auto& b = v.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) y[r * d + c] += b[c];
  return record("add_rowvec", x.shape(), std::move(y), {x, v},
                [n, d](Node& out) {
                  if (auto* g = pgrad(out, 0)) {
                    for (std::size_t i = 0; i < g->size(); ++i)
                      (*g)[i] += out.grad[i];
                  }
                  if (auto* g = pgrad(out, 1)) {
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t c = 0; c < d; ++c)
                        (*g)[c] += out.grad[r * d + c];
                  }
                });
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  require_rank("mul_rowvec", x, 2);
  require_rank("mul_rowvec", v, 1);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (v.dim(0) != d) {
    throw ShapeError("mul_rowvec: " + shape_str(x.shape()) + " * " +
                     shape_str(v.shape()));
  }
  auto y = x.to_vector();
  const auto& b = v.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) y[r * d + c] *= b[c];
  return record("mul_rowvec", x.shape(), std::move(y), {x, v},
                [n, d](Node& out) {
                  const auto& xv = pdata(out, 0);
                  const auto& bv = pdata(out, 1);
                  if (auto* g = pgrad(out, 0)) {
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t c = 0; c < d; ++c)
                        (*g)[r * d + c] += out.grad[r * d + c] * bv[c];
                  }
                  if (auto* g = pgrad(out, 1)) {
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t c = 0; c < d; ++c)
                        (*g)[c] += out.grad[r * d + c] * xv[r * d + c];
                  }
                });
}

Tensor mul_colvec(const Tensor& x, const Tensor& col) {
  require_rank("mul_colvec", x, 2);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (col.numel() != n) {
    throw ShapeError("mul_colvec: " + shape_str(x.shape()) + " * " +
                     shape_str(col.shape()));
  }
  auto y = x.to_vector();
  const auto& c = col.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < d; ++k) y[r * d + k] *= c[r];
  return record("mul_colvec", x.shape(), std::move(y), {x, col},
                [n, d](Node& out) {
                  const auto& xv = pdata(out, 0);
                  const auto& cv = pdata(out, 1);
                  if (auto* g = pgrad(out, 0)) {
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t k = 0; k < d; ++k)
                        (*g)[r * d + k] += out.grad[r * d + k] * cv[r];
                  }
                  if (auto* g = pgrad(out, 1)) {
                    for (std::size_t r = 0; r < n; ++r) {
                      double acc = 0.0;
                      for (std::size_t k = 0; k < d; ++k)
                        acc += out.grad[r * d + k] * xv[r * d + k];
                      (*g)[r] += acc;
                    }
                  }
                });
}

namespace {

// c (n, m) += a (n, k) * b (k, m)
void gemm_nn(const double* a, const double* b, double* c, std::size_t n,
             std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c (n, m) += a (n, k) * b(m, k)^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t n,
             std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * m + j] += acc;
    }
  }
}

// c (k, m) += a (n, k)^T * b (n, m)
void gemm_tn(const double* a, const double* b, double* c, std::size_t n,
             std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      double* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += aip * bi[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> c(n * m, 0.0);
  gemm_nn(a.data().data(), b.data().data(), c.data(), n, k, m);
  return record("matmul", {n, m}, std::move(c), {a, b}, [n, k, m](Node& out) {
    if (auto* g = pgrad(out, 0))  // dA = dC * B^T
      gemm_nt(out.grad.data(), pdata(out, 1).data(), g->data(), n, m, k);
    if (auto* g = pgrad(out, 1))  // dB = A^T * dC
      gemm_tn(pdata(out, 0).data(), out.grad.data(), g->data(), n, k, m);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank("matmul_nt", a, 2);
  require_rank("matmul_nt", b, 2);
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  std::vector<double> c(n * m, 0.0);
  gemm_nt(a.data().data(), b.data().data(), c.data(), n, k, m);
  return record("matmul_nt", {n, m}, std::move(c), {a, b},
                [n, k, m](Node& out) {
                  if (auto* g = pgrad(out, 0))  // dA = dC * B
                    gemm_nn(out.grad.data(), pdata(out, 1).data(), g->data(),
                            n, m, k);
                  if (auto* g = pgrad(out, 1))  // dB = dC^T * A
                    gemm_tn(out.grad.data(), pdata(out, 0).data(), g->data(),
                            n, m, k);
                });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t n = a.dim(0), m = a.dim(1);
  const auto& x = a.data();
  std::vector<double> y(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[j * n + i] = x[i * m + j];
  return record("transpose", {m, n}, std::move(y), {a}, [n, m](Node& out) {
    if (auto* g = pgrad(out, 0)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
          (*g)[i * m + j] += out.grad[j * n + i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const std::size_t rank = parts[0].rank();
  if (rank < 1 || rank > 2 || axis >= rank) {
    throw ShapeError("concat: unsupported rank/axis");
  }
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    if (rank == 2 && p.dim(1 - axis) != parts[0].dim(1 - axis)) {
      throw ShapeError("concat: extent mismatch " + shape_str(p.shape()) +
                       " vs " + shape_str(parts[0].shape()));
    }
  }
  // Treat everything as (rows, cols) with concatenation over rows or cols.
  const std::size_t rows = rank == 1 ? 1 : parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    std::size_t w = rank == 1 ? p.dim(0) : (axis == 0 ? p.dim(0) : p.dim(1));
    widths.push_back(w);
    total += w;
  }
  Shape shape;
  if (rank == 1) {
    shape = {total};
  } else if (axis == 0) {
    shape = {total, parts[0].dim(1)};
  } else {
    shape = {rows, total};
  }
  std::vector<double> y;
  y.reserve(shape_numel(shape));
  if (rank == 1 || axis == 0) {
    for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  } else {
    y.resize(rows * total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& x = parts[k].data();
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(x.begin() + r * widths[k], widths[k],
                    y.begin() + r * total + off);
      off += widths[k];
    }
  }
  const bool by_rows = rank == 1 || axis == 0;
  return record("concat", shape, std::move(y), parts,
                [by_rows, rows, total, widths](Node& out) {
                  std::size_t off = 0;
                  for (std::size_t k = 0; k < widths.size(); ++k) {
                    if (auto* g = pgrad(out, k)) {
                      if (by_rows) {
                        for (std::size_t i = 0; i < g->size(); ++i)
                          (*g)[i] += out.grad[off + i];
                      } else {
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t c = 0; c < widths[k]; ++c)
                            (*g)[r * widths[k] + c] +=
                                out.grad[r * total + off + c];
                      }
                    }
                    off += by_rows ? out.parents[k]->data.size() : widths[k];
                  }
                });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t length) {
  const std::size_t rank = a.rank();
  if (rank < 1 || rank > 2 || axis >= rank) {
    throw ShapeError("slice: unsupported rank/axis");
  }
  if (start + length > a.dim(axis)) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of range for " +
                     shape_str(a.shape()));
  }
  const std::size_t rows = rank == 1 ? 1 : a.dim(0);
  const std::size_t cols = rank == 1 ? a.dim(0) : a.dim(1);
  const bool by_rows = rank == 2 && axis == 0;
  Shape shape = a.shape();
  shape[axis] = length;
  const auto& x = a.data();
  std::vector<double> y;
  y.reserve(shape_numel(shape));
  if (by_rows) {
    y.assign(x.begin() + start * cols, x.begin() + (start + length) * cols);
  } else {
    for (std::size_t r = 0; r < rows; ++r)
      y.insert(y.end(), x.begin() + r * cols + start,
               x.begin() + r * cols + start + length);
  }
  return record("slice", shape, std::move(y), {a},
                [by_rows, rows, cols, start, length](Node& out) {
                  auto* g = pgrad(out, 0);
                  if (!g) return;
                  if (by_rows) {
                    for (std::size_t i = 0; i < out.grad.size(); ++i)
                      (*g)[start * cols + i] += out.grad[i];
                  } else {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < length; ++c)
                        (*g)[r * cols + start + c] += out.grad[r * length + c];
                  }
                });
}

Tensor take_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_rank("take_rows", a, 2);
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> y;
  y.reserve(idx.size() * d);
  const auto& x = a.data();
  for (auto r : idx) {
    if (r >= n) throw ShapeError("take_rows: row index out of range");
    y.insert(y.end(), x.begin() + r * d, x.begin() + (r + 1) * d);
  }
  return record("take_rows", {idx.size(), d}, std::move(y), {a},
                [idx, d](Node& out) {
                  auto* g = pgrad(out, 0);
                  if (!g) return;
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t c = 0; c < d; ++c)
                      (*g)[idx[i] * d + c] += out.grad[i * d + c];
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " +
                     shape_str(shape));
  }
  return record("reshape", std::move(shape), a.to_vector(), {a}, [](Node& out) {
    if (auto* g = pgrad(out, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return record("sum", {}, {acc}, {a}, [](Node& out) {
    if (auto* g = pgrad(out, 0))
      for (auto& v : *g) v += out.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  const double n = static_cast<double>(a.numel());
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return record("mean", {}, {acc / n}, {a}, [n](Node& out) {
    if (auto* g = pgrad(out, 0))
      for (auto& v : *g) v += out.grad[0] / n;
  });
}

Tensor sum_rows(const Tensor& a) {
  require_rank("sum_rows", a, 2);
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<double> y(d, 0.0);
  const auto& x = a.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) y[c] += x[r * d + c];
  return record("sum_rows", {d}, std::move(y), {a}, [n, d](Node& out) {
    if (auto* g = pgrad(out, 0))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) (*g)[r * d + c] += out.grad[c];
  });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw ShapeError("log: argument must be positive");
  }
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a,
               [](double x) {
                 return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                               : std::exp(x) / (1.0 + std::exp(x));
               },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary("gelu", a,
               [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
               [inv_sqrt2pi](double x, double) {
                 return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                        x * inv_sqrt2pi * std::exp(-0.5 * x * x);
               });
}

Tensor softmax(const Tensor& a) {
  auto [n, d] = as_matrix("softmax", a);
  if (d == 0) throw ShapeError("softmax over empty rows");
  auto y = a.to_vector();
  for (std::size_t r = 0; r < n; ++r) {
    double* row = y.data() + r * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += (row[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < d; ++c) row[c] /= z;
  }
  return record("softmax", a.shape(), std::move(y), {a}, [n, d](Node& out) {
    auto* g = pgrad(out, 0);
    if (!g) return;
    for (std::size_t r = 0; r < n; ++r) {
      const double* p = out.data.data() + r * d;
      const double* go = out.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += go[c] * p[c];
      for (std::size_t c = 0; c < d; ++c) (*g)[r * d + c] += p[c] * (go[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  auto [n, d] = as_matrix("log_softmax", a);
  if (d == 0) throw ShapeError("log_softmax over empty rows");
  auto y = a.to_vector();
  for (std::size_t r = 0; r < n; ++r) {
    double* row = y.data() + r * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += std::exp(row[c] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < d; ++c) row[c] -= lz;
  }
  return record("log_softmax", a.shape(), std::move(y), {a}, [n, d](Node& out) {
    auto* g = pgrad(out, 0);
    if (!g) return;
    for (std::size_t r = 0; r < n; ++r) {
      const double* ly = out.data.data() + r * d;
      const double* go = out.grad.data() + r * d;
      double total = 0.0;
      for (std::size_t c = 0; c < d; ++c) total += go[c];
      for (std::size_t c = 0; c < d; ++c)
        (*g)[r * d + c] += go[c] - std::exp(ly[c]) * total;
    }
  });
}

Tensor row_mean(const Tensor& a) {
  require_rank("row_mean", a, 2);
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<double> y(n, 0.0);
  const auto& x = a.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) y[r] += x[r * d + c];
    y[r] /= static_cast<double>(d);
  }
  return record("row_mean", {n, 1}, std::move(y), {a}, [n, d](Node& out) {
    if (auto* g = pgrad(out, 0))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c)
          (*g)[r * d + c] += out.grad[r] / static_cast<double>(d);
  });
}

Tensor row_std(const Tensor& a, double eps) {
  require_rank("row_std", a, 2);
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<double> mu(n, 0.0), y(n, 0.0);
  const auto& x = a.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) mu[r] += x[r * d + c];
    mu[r] /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = x[r * d + c] - mu[r];
      var += dv * dv;
    }
    y[r] = std::sqrt(var / static_cast<double>(d) + eps);
  }
  return record("row_std", {n, 1}, std::move(y), {a}, [n, d, mu](Node& out) {
    auto* g = pgrad(out, 0);
    if (!g) return;
    const auto& x = pdata(out, 0);
    for (std::size_t r = 0; r < n; ++r) {
      if (out.data[r] == 0.0) {
        if (out.grad[r] != 0.0) throw NumericalError("row_std: zero deviation");
        continue;
      }
      const double k = out.grad[r] / (static_cast<double>(d) * out.data[r]);
      for (std::size_t c = 0; c < d; ++c)
        (*g)[r * d + c] += k * (x[r * d + c] - mu[r]);
    }
  });
}

Tensor normalize_rows(const Tensor& a, double eps) {
  require_rank("normalize_rows", a, 2);
  const std::size_t n = a.dim(0), d = a.dim(1);
  const auto& x = a.data();
  std::vector<double> y(n * d), inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += x[r * d + c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = x[r * d + c] - mu;
      var += dv * dv;
    }
    const double sd = std::sqrt(var / static_cast<double>(d) + eps);
    if (!(sd > 0.0)) throw NumericalError("normalize_rows: zero deviation");
    inv_std[r] = 1.0 / sd;
    for (std::size_t c = 0; c < d; ++c) y[r * d + c] = (x[r * d + c] - mu) * inv_std[r];
  }
  return record("normalize_rows", a.shape(), std::move(y), {a},
                [n, d, inv_std](Node& out) {
                  auto* g = pgrad(out, 0);
                  if (!g) return;
                  const double dd = static_cast<double>(d);
                  for (std::size_t r = 0; r < n; ++r) {
                    const double* xh = out.data.data() + r * d;
                    const double* go = out.grad.data() + r * d;
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                      s1 += go[c];
                      s2 += go[c] * xh[c];
                    }
                    for (std::size_t c = 0; c < d; ++c)
                      (*g)[r * d + c] +=
                          inv_std[r] * (go[c] - s1 / dd - xh[c] * s2 / dd);
                  }
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  return add_rowvec(mul_rowvec(normalize_rows(x, eps), gamma), beta);
}

Tensor lookup(const Tensor& table, std::span<const std::size_t> indices,
              Shape shape) {
  if (shape_numel(shape) != indices.size()) {
    throw ShapeError("lookup: index count does not match shape");
  }
  const auto& t = table.data();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> y(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= t.size()) throw ShapeError("lookup: index out of range");
    y[i] = t[idx[i]];
  }
  return record("lookup", std::move(shape), std::move(y), {table},
                [idx](Node& out) {
                  auto* g = pgrad(out, 0);
                  if (!g) return;
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    (*g)[idx[i]] += out.grad[i];
                });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> index) {
  require_rank("pick", a, 2);
  const std::size_t n = a.dim(0), d = a.dim(1);
  if (index.size() != n) throw ShapeError("pick: one index per row required");
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> y(n);
  const auto& x = a.data();
  for (std::size_t r = 0; r < n; ++r) {
    if (idx[r] >= d) throw ShapeError("pick: column index out of range");
    y[r] = x[r * d + idx[r]];
  }
  return record("pick", {n}, std::move(y), {a}, [idx, d](Node& out) {
    auto* g = pgrad(out, 0);
    if (!g) return;
    for (std::size_t r = 0; r < idx.size(); ++r) (*g)[r * d + idx[r]] += out.grad[r];
  });
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel,
                                 const Conv1dSpec& spec) {
  const std::size_t padded = length + spec.pad_left + spec.pad_right;
  if (spec.stride == 0 || kernel == 0 || padded < kernel) return 0;
  return 1 + (padded - kernel) / spec.stride;
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv1dSpec& spec) {
  require_rank("conv1d input", x, 2);
  require_rank("conv1d weight", weight, 3);
  const std::size_t t_in = x.dim(0), c_in = x.dim(1);
  const std::size_t c_out = weight.dim(0), cpg_in = weight.dim(1),
                    kernel = weight.dim(2);
  const std::size_t groups = spec.groups;
  if (groups == 0 || c_in % groups != 0 || c_out % groups != 0 ||
      cpg_in != c_in / groups) {
    throw ShapeError("conv1d: channel/group mismatch, input " +
                     shape_str(x.shape()) + ", weight " +
                     shape_str(weight.shape()) + ", groups " +
                     std::to_string(groups));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw ShapeError("conv1d: bias must have shape (C_out)");
  }
  const std::size_t t_out = conv1d_output_length(t_in, kernel, spec);
  if (t_out == 0) {
    throw ShapeError("conv1d: input of length " + std::to_string(t_in) +
                     " shorter than kernel " + std::to_string(kernel));
  }
  const std::size_t cpg_out = c_out / groups;
  const std::size_t stride = spec.stride;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(spec.pad_left);
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  std::vector<double> y(t_out * c_out, 0.0);
  if (bias.defined()) {
    const auto& b = bias.data();
    for (std::size_t t = 0; t < t_out; ++t)
      std::copy(b.begin(), b.end(), y.begin() + t * c_out);
  }
  // y[t, o] += sum_{i in group, k} w[o, i, k] * x[t*stride + k - pad, g*cpg_in + i]
  auto in_index = [=](std::size_t t, std::size_t k) -> std::ptrdiff_t {
    return static_cast<std::ptrdiff_t>(t * stride + k) - pad;
  };
  for (std::size_t t = 0; t < t_out; ++t) {
    double* yt = y.data() + t * c_out;
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t s = in_index(t, k);
      if (s < 0 || s >= static_cast<std::ptrdiff_t>(t_in)) continue;
      const double* xs = xd + s * c_in;
      for (std::size_t o = 0; o < c_out; ++o) {
        const std::size_t g0 = (o / cpg_out) * cpg_in;
        const double* w = wd + (o * cpg_in) * kernel + k;
        double acc = 0.0;
        for (std::size_t i = 0; i < cpg_in; ++i) acc += w[i * kernel] * xs[g0 + i];
        yt[o] += acc;
      }
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return record(
      "conv1d", {t_out, c_out}, std::move(y), inputs,
      [=](Node& out) {
        const double* xd = pdata(out, 0).data();
        const double* wd = pdata(out, 1).data();
        auto* gx = pgrad(out, 0);
        auto* gw = pgrad(out, 1);
        const double* go = out.grad.data();
        for (std::size_t t = 0; t < t_out; ++t) {
          const double* got = go + t * c_out;
          for (std::size_t k = 0; k < kernel; ++k) {
            const std::ptrdiff_t s = in_index(t, k);
            if (s < 0 || s >= static_cast<std::ptrdiff_t>(t_in)) continue;
            for (std::size_t o = 0; o < c_out; ++o) {
              const double gv = got[o];
              if (gv == 0.0) continue;
              const std::size_t g0 = (o / cpg_out) * cpg_in;
              const std::size_t wbase = (o * cpg_in) * kernel + k;
              if (gw) {
                const double* xs = xd + s * c_in + g0;
                for (std::size_t i = 0; i < cpg_in; ++i)
                  (*gw)[wbase + i * kernel] += gv * xs[i];
              }
              if (gx) {
                double* gxs = gx->data() + s * c_in + g0;
                for (std::size_t i = 0; i < cpg_in; ++i)
                  gxs[i] += gv * wd[wbase + i * kernel];
              }
            }
          }
        }
        if (has_bias) {
          if (auto* gb = pgrad(out, 2))
            for (std::size_t t = 0; t < t_out; ++t)
              for (std::size_t o = 0; o < c_out; ++o) (*gb)[o] += go[t * c_out + o];
        }
      });
}

}  // namespace tspt::ops
