// SPDX-License-Identifier: Apache-2.0
#include "tspt/mixer/mixer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "tspt/error.hpp"

namespace tspt {

double interference_gain(double main_energy, double interf_energy, double k_db) {
  if (!(main_energy > 0.0) || !(interf_energy > 0.0)) {
    throw DataError("rescale_interference: zero-energy main or interferer");
  }
  return std::sqrt(main_energy / (interf_energy * std::pow(10.0, k_db / 10.0)));
}

Waveform rescale_interference(const Waveform& main, const Waveform& interf,
                              double k_db) {
  const double g = interference_gain(energy(main), energy(interf), k_db);
  Waveform out = interf;
  for (auto& s : out.samples) s *= g;
  return out;
}

MixWindow sample_mix_window(std::size_t main_len, std::size_t interf_len, Rng& rng) {
  if (main_len == 0 || interf_len == 0) throw DataError("mix: empty waveform");
  MixWindow w;
  w.length = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(main_len)));
  w.length = std::min(w.length, interf_len);
  w.main_start = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(main_len - w.length)));
  w.interf_start = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(interf_len - w.length)));
  return w;
}

Waveform overlay(const Waveform& y, const Waveform& u, const MixWindow& window) {
  if (y.sample_rate != u.sample_rate) {
    throw DataError("mix: sample-rate mismatch (" + std::to_string(y.sample_rate) +
                    " vs " + std::to_string(u.sample_rate) + ")");
  }
  if (window.length == 0 || window.main_start + window.length > y.size() ||
      window.interf_start + window.length > u.size()) {
    throw DataError("mix: window out of range");
  }
  Waveform out = y;
  for (std::size_t i = 0; i < window.length; ++i) {
    out.samples[window.main_start + i] += u.samples[window.interf_start + i];
  }
  return out;
}

std::pair<Waveform, MixMeta> mix_pair(const Waveform& y, const Waveform& u, Rng& rng) {
  if (y.sample_rate != u.sample_rate) {
    throw DataError("mix: sample-rate mismatch (" + std::to_string(y.sample_rate) +
                    " vs " + std::to_string(u.sample_rate) + ")");
  }
  MixMeta meta;
  meta.k_db = rng.uniform(kMinMixDb, kMaxMixDb);
  meta.gain = interference_gain(energy(y), energy(u), meta.k_db);
  Waveform scaled = u;
  for (auto& s : scaled.samples) s *= meta.gain;
  meta.main_len = y.size();
  meta.interf_len = u.size();
  meta.window = sample_mix_window(y.size(), u.size(), rng);
  return {overlay(y, scaled, meta.window), std::move(meta)};
}

std::vector<TrainSample> sample_batch(const SpeakerInventory& inv,
                                      const AudioStore& audio,
                                      std::size_t batch_size, const Rng& rng,
                                      const BatchOptions& options) {
  if (inv.speaker_count() < 2) {
    throw DataError("mixing needs at least 2 speakers, inventory has " +
                    std::to_string(inv.speaker_count()));
  }
  const auto ids = inv.utterance_ids();
  std::vector<TrainSample> batch;
  batch.reserve(batch_size);
  for (std::size_t j = 0; j < batch_size; ++j) {
    Rng r = rng.split(j);
    const UtteranceId& main_id =
        ids[static_cast<std::size_t>(r.uniform_int(0, static_cast<std::int64_t>(ids.size()) - 1))];
    const SpeakerId& main_spk = inv.speaker_of.at(main_id);
    const auto& own = inv.groups.at(main_spk);
    if (own.size() < 2) {
      throw DataError("speaker " + main_spk + " has a single utterance (" + main_id +
                      "); no distinct enrollment exists");
    }

    // Interfering speaker drawn from the per-utterance speaker list,
    // excluding the main speaker.
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (inv.speaker_of.at(ids[i]) != main_spk) others.push_back(i);
    }
    const SpeakerId& interf_spk = inv.speaker_of.at(
        ids[others[static_cast<std::size_t>(r.uniform_int(0, static_cast<std::int64_t>(others.size()) - 1))]]);
    const auto& pool = inv.groups.at(interf_spk);
    const UtteranceId& interf_id =
        pool[static_cast<std::size_t>(r.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];

    auto [mixed, meta] = mix_pair(audio.get(main_id), audio.get(interf_id), r);
    meta.main_id = main_id;
    meta.interferer_id = interf_id;

    std::size_t pick = static_cast<std::size_t>(r.uniform_int(0, static_cast<std::int64_t>(own.size()) - 2));
    const auto self = static_cast<std::size_t>(
        std::find(own.begin(), own.end(), main_id) - own.begin());
    if (pick >= self) ++pick;
    meta.enrollment_id = own[pick];

    TrainSample s;
    s.mixed = std::move(mixed);
    s.enrollment = audio.get(meta.enrollment_id);
    if (auto it = inv.labels.find(main_id); it != inv.labels.end()) {
      s.labels = it->second;
    } else if (options.require_labels) {
      throw DataError("unlabeled utterance encountered: " + main_id);
    }
    s.meta = std::move(meta);
    batch.push_back(std::move(s));
  }
  return batch;
}

Waveform truncate_enrollment_at(const Waveform& e, std::size_t max_samples,
                                std::size_t start) {
  if (max_samples == 0) throw ConfigError("truncate_enrollment: max_samples must be > 0");
  if (e.size() <= max_samples) return e;
  start = std::min(start, e.size() - max_samples);
  Waveform out;
  out.sample_rate = e.sample_rate;
  out.samples.assign(e.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     e.samples.begin() + static_cast<std::ptrdiff_t>(start + max_samples));
  return out;
}

Waveform truncate_enrollment(const Waveform& e, std::size_t max_samples, Rng& rng) {
  if (max_samples == 0) throw ConfigError("truncate_enrollment: max_samples must be > 0");
  if (e.size() <= max_samples) return e;
  const auto start = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(e.size() - max_samples)));
  return truncate_enrollment_at(e, max_samples, start);
}

MixDumpResult dump_mixtures(const SpeakerInventory& inv, const AudioStore& audio,
                            std::size_t n, std::uint64_t seed,
                            const std::filesystem::path& out_dir,
                            const std::map<UtteranceId, std::string>* transcripts) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "mix");
  std::ofstream meta_os(out_dir / "meta.jsonl", std::ios::trunc);
  if (!meta_os) throw DataError("cannot write " + (out_dir / "meta.jsonl").string());

  const Rng base(seed);
  SpeakerInventory mixtures, enrollments;
  std::map<UtteranceId, std::string> enroll_map, mix_transcripts;
  MixDumpResult result;
  for (std::size_t i = 0; i < n; ++i) {
    auto batch = sample_batch(inv, audio, 1, base.split(i), {.require_labels = false});
    auto& s = batch.front();
    char name[32];
    std::snprintf(name, sizeof name, "mix%05zu", i);
    const UtteranceId id = name;
    const fs::path wav = (out_dir / "mix" / (id + ".wav")).lexically_normal();
    result.clamped_samples += save_wav(wav, s.mixed);
    mixtures.add(id, inv.speaker_of.at(s.meta.main_id), wav, s.mixed.size());
    enroll_map[id] = s.meta.enrollment_id;
    if (!enrollments.speaker_of.count(s.meta.enrollment_id)) {
      enrollments.add(s.meta.enrollment_id, inv.speaker_of.at(s.meta.enrollment_id),
                      inv.paths.at(s.meta.enrollment_id),
                      inv.num_samples.at(s.meta.enrollment_id));
    }
    if (transcripts) {
      auto it = transcripts->find(s.meta.main_id);
      if (it == transcripts->end()) {
        throw DataError("no transcript for utterance " + s.meta.main_id);
      }
      mix_transcripts[id] = it->second;
    }
    nlohmann::json j{{"id", id},
                     {"main_id", s.meta.main_id},
                     {"interferer_id", s.meta.interferer_id},
                     {"enrollment_id", s.meta.enrollment_id},
                     {"k_db", s.meta.k_db},
                     {"gain", s.meta.gain},
                     {"M", s.meta.main_len},
                     {"N", s.meta.interf_len},
                     {"l", s.meta.window.length},
                     {"m", s.meta.window.main_start},
                     {"n", s.meta.window.interf_start}};
    meta_os << j.dump() << '\n';
    ++result.samples;
  }
  write_manifest(mixtures, out_dir / "manifest.tsv");
  write_manifest(enrollments, out_dir / "enroll_manifest.tsv");
  write_pairs(enroll_map, out_dir / "enroll_map.tsv");
  if (transcripts) write_pairs(mix_transcripts, out_dir / "transcripts.tsv");
  return result;
}

}  // namespace tspt
