// SPDX-License-Identifier: Apache-2.0
#include "tspt/numcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "tspt/error.hpp"

namespace tspt {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

detail::Node& Tensor::checked() const {
  if (!node_) throw Error("use of undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<const double> Tensor::data() const { return checked().data; }
std::span<double> Tensor::mutable_data() { return checked().data; }
std::vector<double> Tensor::to_vector() const { return checked().data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return checked().data[0];
}

double Tensor::at(std::size_t i) const { return checked().data.at(i); }

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2 || r >= dim(0) || c >= dim(1)) {
    throw ShapeError("at(r, c) out of range for " + shape_str(shape()));
  }
  return checked().data[r * dim(1) + c];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

void Tensor::set_requires_grad(bool value) {
  auto& n = checked();
  if (!n.is_leaf()) throw Error("requires_grad can only be set on leaves");
  n.requires_grad = value;
}

bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::vector<double> Tensor::grad() const {
  auto& n = checked();
  if (n.grad.empty()) return std::vector<double>(n.data.size(), 0.0);
  return n.grad;
}

std::span<double> Tensor::mutable_grad() { return checked().grad_buffer(); }

void Tensor::zero_grad() {
  auto& n = checked();
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

const char* Tensor::op_name() const { return checked().op; }

Tensor Tensor::detach() const {
  return from(shape(), checked().data, false);
}

void Tensor::backward() const {
  auto& root = checked();
  if (root.data.size() != 1) {
    throw ShapeError("backward() requires a scalar, got " +
                     shape_str(root.shape));
  }
  if (root.consumed) throw Error("backward() on an already consumed graph");
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(&root, 0);
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) {
        if (p->consumed) {
          throw Error("backward() through an already consumed graph");
        }
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf()) continue;
    if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
    n->backward(*n);
    for (auto& p : n->parents) {
      if (!p->requires_grad) continue;
      for (double g : p->grad) {
        if (!std::isfinite(g)) {
          throw NumericalError(std::string("non-finite gradient flowing out of ") +
                               n->op);
        }
      }
    }
  }
  for (auto* n : order) {
    if (n->is_leaf()) continue;
    n->consumed = true;
    n->backward = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

}  // namespace tspt
