// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tspt/corpus/wav.hpp"

namespace tspt {

/// Voice parameters of one synthetic speaker.
struct SpeakerProfile {
  double f0_hz = 120.0;
  double resonance1_hz = 600.0;  // neutral first resonance
  double resonance2_hz = 1500.0;  // neutral second resonance
  double bandwidth_hz = 90.0;
  double am_rate_hz = 4.0;  // slow amplitude modulation
  double am_depth = 0.2;
  double target_rms = 0.15;
};

/// Pseudo-phone alphabet of the synthetic language.
inline constexpr char kPhones[] = {'a', 'e', 'i', 'o', 'u'};

struct PlanSegment {
  char phone = 0;  // 0 for silence
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Timeline of a synthetic utterance: words of 1-3 phones separated by
/// short pauses. Deterministic in (num_samples, seed).
struct UtterancePlan {
  std::vector<PlanSegment> segments;
  std::size_t num_samples = 0;

  /// Words joined by single spaces, e.g. "ai eou o".
  std::string transcript() const;
};

UtterancePlan plan_utterance(std::size_t num_samples, std::uint64_t seed,
                             int sample_rate = kDefaultSampleRate);

/// Renders a plan with a speaker's voice.
Waveform render_utterance(const SpeakerProfile& profile, const UtterancePlan& plan,
                          std::uint64_t seed, int sample_rate = kDefaultSampleRate);

/// plan_utterance + render_utterance. Throws ConfigError if duration <= 0.
Waveform synth_utterance(const SpeakerProfile& profile, double duration_s,
                         std::uint64_t seed, int sample_rate = kDefaultSampleRate);

/// Deterministic profile for speaker `index` out of `count`; f0 values are
/// spread over 100-240 Hz so that no two speakers share a pitch.
SpeakerProfile make_speaker_profile(std::size_t index, std::size_t count,
                                    std::uint64_t seed);

}  // namespace tspt
