// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tspt/numcore/tensor.hpp"
#include "tspt/rng.hpp"

namespace tspt {

inline constexpr double kMaskStartRate = 0.08;
inline constexpr std::size_t kMaskSpan = 10;

struct MaskSpec {
  std::size_t frames = 0;
  std::vector<std::size_t> masked;  // sorted, unique
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (start, length)

  bool operator==(const MaskSpec&) const = default;
};

/// max(1, round(rate T)) distinct starts, each opening a span of `span`
/// frames truncated at T. Throws ConfigError for T <= 0.
MaskSpec sample_masks(std::int64_t frames, Rng& rng,
                      double start_rate = kMaskStartRate,
                      std::size_t span = kMaskSpan);

/// Builds a MaskSpec from explicit spans.
MaskSpec mask_from_spans(std::size_t frames,
                         std::vector<std::pair<std::size_t, std::size_t>> spans);

/// Masked rows become +0.0; the rest pass through unchanged.
Tensor apply_masks(const Tensor& x, const MaskSpec& mask);

/// Mean over masked frames of -log softmax(logits[t])[labels[t]].
Tensor masked_ce_loss(const Tensor& logits, std::span<const int> labels,
                      const MaskSpec& mask);

/// Fraction of masked frames whose argmax equals the label.
double masked_accuracy(const Tensor& logits, std::span<const int> labels,
                       const MaskSpec& mask);

inline constexpr int kBlank = 0;

struct CtcTable {
  std::size_t frames = 0;
  std::size_t states = 0;  // 2U + 1
  std::vector<double> log_alpha;

  double at(std::size_t t, std::size_t s) const { return log_alpha[t * states + s]; }
};

/// Minimum frames needed to emit `target` (one blank between repeats).
std::size_t ctc_min_frames(std::span<const int> target);

/// Forward lattice over the blank-interleaved target.
CtcTable ctc_forward(const Tensor& log_probs, std::span<const int> target);

/// Negative log-likelihood summed over all alignments. A target that cannot
/// be aligned in T frames yields an untracked +inf scalar.
Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target);

/// Best path: per-frame argmax, collapse repeats, drop blanks.
std::vector<int> ctc_decode(const Tensor& log_probs);

/// Word-level Levenshtein distance over len(ref). Throws DataError for an
/// empty reference.
double wer(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);
std::size_t edit_distance(const std::vector<std::string>& a,
                          const std::vector<std::string>& b);

}  // namespace tspt
