// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tspt/corpus/wav.hpp"

namespace tspt {

using UtteranceId = std::string;
using SpeakerId = std::string;
using LabelSequence = std::vector<int>;

/// Speaker-grouped utterance catalog.
struct SpeakerInventory {
  std::map<SpeakerId, std::vector<UtteranceId>> groups;  // sorted ids per speaker
  std::map<UtteranceId, SpeakerId> speaker_of;
  std::map<UtteranceId, LabelSequence> labels;
  std::map<UtteranceId, std::filesystem::path> paths;
  std::map<UtteranceId, std::size_t> num_samples;

  std::size_t speaker_count() const { return groups.size(); }
  std::size_t utterance_count() const { return speaker_of.size(); }
  /// All utterance ids in sorted order (the "Q" list's index order).
  std::vector<UtteranceId> utterance_ids() const;

  void add(const UtteranceId& id, const SpeakerId& speaker,
           std::filesystem::path path, std::size_t samples);
  /// Throws DataError if groups and speaker_of disagree or a group is empty.
  void validate() const;

  bool operator==(const SpeakerInventory&) const = default;
};

/// Manifest rows: `utterance_id \t speaker_id \t relative_path \t num_samples`.
/// Paths resolve against the manifest's directory; the audio must exist.
SpeakerInventory build_inventory(const std::filesystem::path& manifest_path);
void write_manifest(const SpeakerInventory& inv,
                    const std::filesystem::path& manifest_path);

/// Label rows: `utterance_id \t space-separated integers`.
std::map<UtteranceId, LabelSequence> load_labels(const std::filesystem::path& path);
void write_labels(const std::map<UtteranceId, LabelSequence>& labels,
                  const std::filesystem::path& path);
/// Copies labels into the inventory; every labelled id must be known.
void attach_labels(SpeakerInventory& inv,
                   const std::map<UtteranceId, LabelSequence>& labels);

/// Two-column TSV (`id \t value`) used for enrollment maps and transcripts.
std::map<UtteranceId, std::string> load_pairs(const std::filesystem::path& path);
void write_pairs(const std::map<UtteranceId, std::string>& pairs,
                 const std::filesystem::path& path);

/// Decoded audio for an inventory, keyed by utterance id.
class AudioStore {
 public:
  AudioStore() = default;
  static AudioStore load(const SpeakerInventory& inv);

  void put(const UtteranceId& id, Waveform w) { audio_[id] = std::move(w); }
  const Waveform& get(const UtteranceId& id) const;
  bool contains(const UtteranceId& id) const { return audio_.count(id) != 0; }

 private:
  std::map<UtteranceId, Waveform> audio_;
};

}  // namespace tspt
