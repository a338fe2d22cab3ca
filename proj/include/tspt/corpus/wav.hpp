// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace tspt {

inline constexpr int kDefaultSampleRate = 16000;

/// Mono audio. Values are nominally in [-1, 1]; mixtures may exceed that
/// range in memory.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  bool operator==(const Waveform&) const = default;
};

double energy(const Waveform& w);
double rms(const Waveform& w);

/// Reads RIFF/WAVE PCM 16-bit mono; samples scaled by 1/32768.
Waveform load_wav(const std::filesystem::path& path);

/// Writes PCM 16-bit mono. Samples outside [-1, 1) are clamped; the number
/// of clamped samples is returned so callers can warn.
std::size_t save_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace tspt
