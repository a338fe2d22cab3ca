// SPDX-License-Identifier: Apache-2.0
#include "tspt/objectives/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tspt/error.hpp"
#include "tspt/numcore/ops.hpp"

namespace tspt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

void require_labels(const char* op, const Tensor& logits, std::span<const int> labels,
                    const MaskSpec& mask) {
  if (logits.shape().size() != 2) throw ShapeError(std::string(op) + ": logits must be (T, K)");
  const std::size_t t = logits.dim(0), k = logits.dim(1);
  if (labels.size() != t) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(t) + " frames");
  }
  if (mask.masked.empty()) throw DataError(std::string(op) + ": empty mask");
  for (auto i : mask.masked) {
    if (i >= t) throw ShapeError(std::string(op) + ": mask index out of range");
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw DataError(std::string(op) + ": label " + std::to_string(labels[i]) +
                      " outside [0, " + std::to_string(k) + ")");
    }
  }
}

std::vector<int> interleave(std::span<const int> target) {
  std::vector<int> ext(2 * target.size() + 1, kBlank);
  for (std::size_t u = 0; u < target.size(); ++u) ext[2 * u + 1] = target[u];
  return ext;
}

}  // namespace

MaskSpec mask_from_spans(std::size_t frames,
                         std::vector<std::pair<std::size_t, std::size_t>> spans) {
  MaskSpec m;
  m.frames = frames;
  std::vector<char> hit(frames, 0);
  for (auto& [start, len] : spans) {
    if (start >= frames) throw ShapeError("mask span starts beyond the sequence");
    len = std::min(len, frames - start);
    std::fill(hit.begin() + static_cast<std::ptrdiff_t>(start),
              hit.begin() + static_cast<std::ptrdiff_t>(start + len), 1);
  }
  std::sort(spans.begin(), spans.end());
  m.spans = std::move(spans);
  for (std::size_t i = 0; i < frames; ++i) {
    if (hit[i]) m.masked.push_back(i);
  }
  return m;
}

MaskSpec sample_masks(std::int64_t frames, Rng& rng, double start_rate, std::size_t span) {
  if (frames <= 0) throw ConfigError("sample_masks: T must be positive");
  const auto t = static_cast<std::size_t>(frames);
  const auto n = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(start_rate * static_cast<double>(t))));
  std::vector<std::size_t> pool(t);
  std::iota(pool.begin(), pool.end(), 0);
  // Partial Fisher-Yates: the first n entries are a uniform draw without
  // replacement.
  for (std::size_t i = 0; i < std::min(n, t); ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(t) - 1));
    std::swap(pool[i], pool[j]);
  }
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (std::size_t i = 0; i < std::min(n, t); ++i) spans.emplace_back(pool[i], span);
  return mask_from_spans(t, std::move(spans));
}

Tensor apply_masks(const Tensor& x, const MaskSpec& mask) {
  if (x.shape().size() != 2) throw ShapeError("apply_masks: expected (T, D)");
  const std::size_t t = x.dim(0), d = x.dim(1);
  std::vector<char> keep(t, 1);
  for (auto i : mask.masked) {
    if (i >= t) {
      throw ShapeError("apply_masks: index " + std::to_string(i) + " out of range for T=" +
                       std::to_string(t));
    }
    keep[i] = 0;
  }
  auto y = x.to_vector();
  for (std::size_t i = 0; i < t; ++i) {
    if (!keep[i]) std::fill_n(y.begin() + static_cast<std::ptrdiff_t>(i * d), d, 0.0);
  }
  return ops::custom("apply_masks", x.shape(), std::move(y), {x},
                     [keep, d](detail::Node& out) {
                       auto& p = *out.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.grad_buffer();
                       for (std::size_t i = 0; i < keep.size(); ++i) {
                         if (!keep[i]) continue;
                         for (std::size_t c = 0; c < d; ++c) g[i * d + c] += out.grad[i * d + c];
                       }
                     });
}

Tensor masked_ce_loss(const Tensor& logits, std::span<const int> labels,
                      const MaskSpec& mask) {
  require_labels("masked_ce_loss", logits, labels, mask);
  std::vector<std::size_t> targets;
  targets.reserve(mask.masked.size());
  for (auto i : mask.masked) targets.push_back(static_cast<std::size_t>(labels[i]));
  const auto picked = ops::pick(ops::log_softmax(ops::take_rows(logits, mask.masked)), targets);
  return ops::neg(ops::mean(picked));
}

double masked_accuracy(const Tensor& logits, std::span<const int> labels,
                       const MaskSpec& mask) {
  require_labels("masked_accuracy", logits, labels, mask);
  const std::size_t k = logits.dim(1);
  const auto& x = logits.data();
  std::size_t correct = 0;
  for (auto i : mask.masked) {
    const auto row = x.begin() + static_cast<std::ptrdiff_t>(i * k);
    const auto best = static_cast<int>(std::max_element(row, row + static_cast<std::ptrdiff_t>(k)) - row);
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(mask.masked.size());
}

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t n = target.size();
  for (std::size_t u = 1; u < target.size(); ++u) n += target[u] == target[u - 1];
  return n;
}

CtcTable ctc_forward(const Tensor& log_probs, std::span<const int> target) {
  if (log_probs.shape().size() != 2) throw ShapeError("ctc: log_probs must be (T, V)");
  const std::size_t t_len = log_probs.dim(0), v = log_probs.dim(1);
  for (int tok : target) {
    if (tok <= kBlank || static_cast<std::size_t>(tok) >= v) {
      throw DataError("ctc: target token " + std::to_string(tok) + " outside [1, " +
                      std::to_string(v) + ")");
    }
  }
  const auto ext = interleave(target);
  const std::size_t s_len = ext.size();
  const auto& lp = log_probs.data();
  CtcTable tab{t_len, s_len, std::vector<double>(t_len * s_len, kNegInf)};
  if (t_len == 0) return tab;
  tab.log_alpha[0] = lp[static_cast<std::size_t>(ext[0])];
  if (s_len > 1) tab.log_alpha[1] = lp[static_cast<std::size_t>(ext[1])];
  for (std::size_t t = 1; t < t_len; ++t) {
    const double* prev = &tab.log_alpha[(t - 1) * s_len];
    double* cur = &tab.log_alpha[t * s_len];
    for (std::size_t s = 0; s < s_len; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]) a = log_add(a, prev[s - 2]);
      cur[s] = a == kNegInf ? kNegInf : a + lp[t * v + static_cast<std::size_t>(ext[s])];
    }
  }
  return tab;
}

Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target) {
  const auto alpha = ctc_forward(log_probs, target);
  const std::size_t t_len = alpha.frames, s_len = alpha.states, v = log_probs.dim(1);
  if (t_len == 0 || ctc_min_frames(target) > t_len) {
    return Tensor::scalar(std::numeric_limits<double>::infinity());
  }
  double log_p = alpha.at(t_len - 1, s_len - 1);
  if (s_len > 1) log_p = log_add(log_p, alpha.at(t_len - 1, s_len - 2));

  auto ext = interleave(target);
  return ops::custom(
      "ctc_loss", {}, {-log_p}, {log_probs},
      [alpha, ext = std::move(ext), log_p, t_len, s_len, v](detail::Node& out) {
        auto& p = *out.parents[0];
        if (!p.requires_grad) return;
        const auto& lp = p.data;
        std::vector<double> beta(t_len * s_len, kNegInf);
        auto b = [&](std::size_t t, std::size_t s) -> double& { return beta[t * s_len + s]; };
        b(t_len - 1, s_len - 1) = lp[(t_len - 1) * v + static_cast<std::size_t>(ext[s_len - 1])];
        if (s_len > 1) {
          b(t_len - 1, s_len - 2) = lp[(t_len - 1) * v + static_cast<std::size_t>(ext[s_len - 2])];
        }
        for (std::size_t t = t_len - 1; t-- > 0;) {
          for (std::size_t s = 0; s < s_len; ++s) {
            double a = b(t + 1, s);
            if (s + 1 < s_len) a = log_add(a, b(t + 1, s + 1));
            if (s + 2 < s_len && ext[s + 2] != kBlank && ext[s + 2] != ext[s]) {
              a = log_add(a, b(t + 1, s + 2));
            }
            b(t, s) = a == kNegInf ? kNegInf : a + lp[t * v + static_cast<std::size_t>(ext[s])];
          }
        }
        auto& g = p.grad_buffer();
        const double up = out.grad[0];
        std::vector<double> occ(v);
        for (std::size_t t = 0; t < t_len; ++t) {
          std::fill(occ.begin(), occ.end(), kNegInf);
          for (std::size_t s = 0; s < s_len; ++s) {
            const auto k = static_cast<std::size_t>(ext[s]);
            occ[k] = log_add(occ[k], alpha.at(t, s) + b(t, s));
          }
          for (std::size_t k = 0; k < v; ++k) {
            if (occ[k] == kNegInf) continue;
            g[t * v + k] -= up * std::exp(occ[k] - lp[t * v + k] - log_p);
          }
        }
      });
}

std::vector<int> ctc_decode(const Tensor& log_probs) {
  if (log_probs.shape().size() != 2) throw ShapeError("ctc_decode: expected (T, V)");
  const std::size_t t_len = log_probs.dim(0), v = log_probs.dim(1);
  const auto& x = log_probs.data();
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < t_len; ++t) {
    const auto row = x.begin() + static_cast<std::ptrdiff_t>(t * v);
    const int best = static_cast<int>(std::max_element(row, row + static_cast<std::ptrdiff_t>(v)) - row);
    if (best != prev && best != kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

std::size_t edit_distance(const std::vector<std::string>& a,
                          const std::vector<std::string>& b) {
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] != b[j - 1])});
      diag = up;
    }
  }
  return row[b.size()];
}

double wer(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  if (ref.empty()) throw DataError("wer: empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

}  // namespace tspt
