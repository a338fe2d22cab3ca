// SPDX-License-Identifier: Apache-2.0
#include "tspt/corpus/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "tspt/error.hpp"
#include "tspt/rng.hpp"

namespace tspt {

namespace {

// Resonance multipliers applied to the speaker's neutral resonances.
struct PhoneShape {
  double r1, r2;
};
constexpr std::array<PhoneShape, 5> kPhoneShapes{{
    {1.25, 0.75},  // a
    {0.85, 1.25},  // e
    {0.50, 1.55},  // i
    {0.95, 0.55},  // o
    {0.55, 0.60},  // u
}};

std::size_t phone_index(char p) {
  for (std::size_t i = 0; i < std::size(kPhones); ++i)
    if (kPhones[i] == p) return i;
  return 0;
}

constexpr double kMaxHarmonicHz = 5000.0;
constexpr double kNoiseFloor = 1e-4;

}  // namespace

std::string UtterancePlan::transcript() const {
  std::string out;
  bool in_word = false;
  for (const auto& s : segments) {
    if (s.phone == 0) {
      in_word = false;
      continue;
    }
    if (!in_word && !out.empty()) out += ' ';
    out += s.phone;
    in_word = true;
  }
  return out;
}

UtterancePlan plan_utterance(std::size_t num_samples, std::uint64_t seed,
                             int sample_rate) {
  Rng rng = Rng(seed).split(1);
  const auto ms = [&](double v) {
    return static_cast<std::size_t>(v * sample_rate / 1000.0);
  };
  UtterancePlan plan;
  plan.num_samples = num_samples;
  std::size_t pos = std::min(num_samples, ms(60));
  if (pos > 0) plan.segments.push_back({0, 0, pos});
  const std::size_t tail = ms(60);
  while (true) {
    const int n_phones = static_cast<int>(rng.uniform_int(1, 3));
    std::vector<PlanSegment> word;
    std::size_t need = 0;
    char prev = 0;
    for (int k = 0; k < n_phones; ++k) {
      char p;
      do {
        p = kPhones[rng.uniform_int(0, std::size(kPhones) - 1)];
      } while (p == prev);
      prev = p;
      const std::size_t len = ms(rng.uniform(110.0, 180.0));
      word.push_back({p, 0, len});
      need += len;
    }
    const std::size_t gap = ms(rng.uniform(70.0, 110.0));
    if (pos + need + tail > num_samples) break;
    for (auto& s : word) {
      s.start = pos;
      pos += s.length;
      plan.segments.push_back(s);
    }
    const std::size_t g = std::min(gap, num_samples - pos);
    if (g > 0) {
      plan.segments.push_back({0, pos, g});
      pos += g;
    }
  }
  if (pos < num_samples) plan.segments.push_back({0, pos, num_samples - pos});
  return plan;
}

Waveform render_utterance(const SpeakerProfile& profile, const UtterancePlan& plan,
                          std::uint64_t seed, int sample_rate) {
  const std::size_t n = plan.num_samples;
  Rng rng = Rng(seed).split(2);
  const double fs = static_cast<double>(sample_rate);
  const double two_pi = 2.0 * std::numbers::pi;

  // Per-sample resonance targets and voicing gate, smoothed over 15 ms.
  std::vector<double> r1(n, profile.resonance1_hz), r2(n, profile.resonance2_hz),
      voiced(n, 0.0);
  for (const auto& s : plan.segments) {
    if (s.phone == 0) continue;
    const auto& shape = kPhoneShapes[phone_index(s.phone)];
    for (std::size_t i = s.start; i < s.start + s.length && i < n; ++i) {
      r1[i] = profile.resonance1_hz * shape.r1;
      r2[i] = profile.resonance2_hz * shape.r2;
      voiced[i] = 1.0;
    }
  }
  const double alpha = 1.0 - std::exp(-1.0 / (0.015 * fs));
  double s1 = r1.empty() ? 0.0 : r1[0], s2 = r2.empty() ? 0.0 : r2[0],
         sv = voiced.empty() ? 0.0 : voiced[0];
  for (std::size_t i = 0; i < n; ++i) {
    s1 += alpha * (r1[i] - s1);
    s2 += alpha * (r2[i] - s2);
    sv += alpha * (voiced[i] - sv);
    r1[i] = s1;
    r2[i] = s2;
    voiced[i] = sv;
  }

  const std::size_t harmonics =
      std::max<std::size_t>(1, static_cast<std::size_t>(kMaxHarmonicHz / profile.f0_hz));
  std::vector<double> phase(harmonics);
  for (auto& p : phase) p = rng.uniform(0.0, two_pi);
  const double vibrato_rate = rng.uniform(4.0, 6.0);
  const double am_phase = rng.uniform(0.0, two_pi);
  const double bw2 = 2.0 * profile.bandwidth_hz * profile.bandwidth_hz;

  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(n, 0.0);
  // Harmonic gains follow the resonances; they are refreshed every
  // kGainBlock samples since the resonance tracks move slowly.
  constexpr std::size_t kGainBlock = 16;
  std::vector<double> tilt(harmonics), gain(harmonics);
  for (std::size_t h = 1; h <= harmonics; ++h) tilt[h - 1] = std::pow(static_cast<double>(h), -1.5);
  double f0_phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double f0 = profile.f0_hz * (1.0 + 0.01 * std::sin(two_pi * vibrato_rate * t));
    f0_phase += two_pi * f0 / fs;
    if (i % kGainBlock == 0) {
      for (std::size_t h = 1; h <= harmonics; ++h) {
        const double f = f0 * static_cast<double>(h);
        const double d1 = f - r1[i], d2 = f - r2[i];
        gain[h - 1] = tilt[h - 1] *
                      (1.0 + 1.5 * (std::exp(-d1 * d1 / bw2) + std::exp(-d2 * d2 / bw2)));
      }
    }
    double acc = 0.0;
    if (voiced[i] > 1e-6) {
      for (std::size_t h = 1; h <= harmonics; ++h) {
        acc += gain[h - 1] * std::sin(static_cast<double>(h) * f0_phase + phase[h - 1]);
      }
    }
    const double am =
        1.0 - profile.am_depth * 0.5 * (1.0 + std::sin(two_pi * profile.am_rate_hz * t + am_phase));
    w.samples[i] = voiced[i] * am * acc;
  }
  // Scale voiced content to the target RMS, then add a faint noise floor.
  const double level = rms(w);
  const double g = level > 0.0 ? profile.target_rms / level : 0.0;
  for (auto& s : w.samples) s = s * g + kNoiseFloor * rng.uniform(-1.0, 1.0);
  return w;
}

Waveform synth_utterance(const SpeakerProfile& profile, double duration_s,
                         std::uint64_t seed, int sample_rate) {
  if (!(duration_s > 0.0)) throw ConfigError("synth_utterance: duration must be > 0");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  if (n == 0) throw ConfigError("synth_utterance: duration shorter than one sample");
  return render_utterance(profile, plan_utterance(n, seed, sample_rate), seed,
                          sample_rate);
}

SpeakerProfile make_speaker_profile(std::size_t index, std::size_t count,
                                    std::uint64_t seed) {
  Rng rng = Rng(seed).split({7, index});
  SpeakerProfile p;
  const double span = count > 1 ? 140.0 / static_cast<double>(count - 1) : 0.0;
  p.f0_hz = 100.0 + span * static_cast<double>(index) +
            rng.uniform(-0.2, 0.2) * std::min(span, 10.0);
  p.resonance1_hz = rng.uniform(520.0, 720.0);
  p.resonance2_hz = rng.uniform(1300.0, 1800.0);
  p.bandwidth_hz = rng.uniform(70.0, 110.0);
  p.am_rate_hz = rng.uniform(2.5, 6.0);
  p.am_depth = rng.uniform(0.1, 0.35);
  p.target_rms = rng.uniform(0.1, 0.25);
  return p;
}

}  // namespace tspt
