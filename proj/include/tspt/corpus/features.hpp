// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "tspt/corpus/wav.hpp"

namespace tspt {

struct FeatureConfig {
  std::size_t n_mels = 40;
  std::size_t frame_len = 400;  // 25 ms at 16 kHz
  std::size_t frame_hop = 160;  // 10 ms at 16 kHz
  std::size_t n_fft = 512;
  double floor = 1e-10;

  bool operator==(const FeatureConfig&) const = default;
};

/// Row-major T x D frame matrix.
struct FeatureMatrix {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::size_t frame_hop = 0;
  std::size_t frame_len = 0;
  std::vector<double> values;

  const double* row(std::size_t t) const { return values.data() + t * dim; }
  double at(std::size_t t, std::size_t d) const { return values[t * dim + d]; }
};

/// 1 + floor((num_samples - frame_len) / hop), or 0 when shorter than a frame.
std::size_t num_frames(std::size_t num_samples, std::size_t frame_len,
                       std::size_t frame_hop);

/// log(mel-filtered power spectrum + floor) over Hamming-windowed frames.
FeatureMatrix logmel(const Waveform& w, const FeatureConfig& cfg = {});

}  // namespace tspt
