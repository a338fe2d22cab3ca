// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tspt/corpus/inventory.hpp"
#include "tspt/corpus/wav.hpp"
#include "tspt/rng.hpp"

namespace tspt {

inline constexpr double kMinMixDb = -5.0;
inline constexpr double kMaxMixDb = 5.0;
inline constexpr std::size_t kDefaultEnrollSamples = 48000;

/// Where the interfering segment lands: y[main_start, main_start + length)
/// receives u[interf_start, interf_start + length).
struct MixWindow {
  std::size_t length = 0;
  std::size_t main_start = 0;
  std::size_t interf_start = 0;
};

struct MixMeta {
  double k_db = 0.0;  // 10 log10(E_main / E_interf_rescaled)
  double gain = 1.0;  // factor applied to the interferer
  std::size_t main_len = 0;    // M
  std::size_t interf_len = 0;  // N
  MixWindow window;
  UtteranceId main_id;
  UtteranceId interferer_id;
  UtteranceId enrollment_id;
};

struct TrainSample {
  Waveform mixed;
  Waveform enrollment;
  LabelSequence labels;
  MixMeta meta;
};

/// g = sqrt(E_main / (E_interf * 10^(k/10))). Throws DataError on zero energy.
double interference_gain(double main_energy, double interf_energy, double k_db);

/// Interferer scaled so that 10 log10(E_main / E_out) == k_db.
Waveform rescale_interference(const Waveform& main, const Waveform& interf,
                              double k_db);

/// l ~ U{1..M}, l = min(l, N), m ~ U{0..M-l}, n ~ U{0..N-l}.
MixWindow sample_mix_window(std::size_t main_len, std::size_t interf_len, Rng& rng);

/// y with u[n:n+l] added onto y[m:m+l]; every other sample untouched.
Waveform overlay(const Waveform& y, const Waveform& u, const MixWindow& window);

/// Samples k ~ U(-5, 5), rescales u, samples the window and overlays.
std::pair<Waveform, MixMeta> mix_pair(const Waveform& y, const Waveform& u, Rng& rng);

struct BatchOptions {
  bool require_labels = true;
};

/// One batch of the speaker-aware mixing strategy. Sample j draws from
/// `rng.split(j)`, so samples are reproducible independently of each other.
std::vector<TrainSample> sample_batch(const SpeakerInventory& inv,
                                      const AudioStore& audio,
                                      std::size_t batch_size, const Rng& rng,
                                      const BatchOptions& options = {});

/// Contiguous window of at most max_samples at a uniform start.
Waveform truncate_enrollment(const Waveform& e, std::size_t max_samples, Rng& rng);
/// Deterministic variant with a given start (clamped to the valid range).
Waveform truncate_enrollment_at(const Waveform& e, std::size_t max_samples,
                                std::size_t start);

struct MixDumpResult {
  std::size_t samples = 0;
  std::size_t clamped_samples = 0;
};

/// Materializes `n` mixtures under `out_dir`: mix/<id>.wav, meta.jsonl,
/// manifest.tsv (mixture rows, main speaker), enroll_map.tsv,
/// enroll_manifest.tsv (the enrollment utterances) and, when transcripts of
/// the clean corpus are given, transcripts.tsv for the mixtures.
MixDumpResult dump_mixtures(const SpeakerInventory& inv, const AudioStore& audio,
                            std::size_t n, std::uint64_t seed,
                            const std::filesystem::path& out_dir,
                            const std::map<UtteranceId, std::string>* transcripts);

}  // namespace tspt
