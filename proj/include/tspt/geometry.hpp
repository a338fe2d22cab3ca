// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace tspt {

// CNN encoder framing: 400-sample receptive field, 320-sample hop
// (25 ms / 20 ms at 16 kHz).
inline constexpr std::size_t kEncoderReceptiveField = 400;
inline constexpr std::size_t kEncoderHop = 320;

inline constexpr std::size_t encoder_frame_count(std::size_t num_samples) {
  return num_samples < kEncoderReceptiveField
             ? 0
             : 1 + (num_samples - kEncoderReceptiveField) / kEncoderHop;
}

}  // namespace tspt
