// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tspt/corpus/inventory.hpp"
#include "tspt/corpus/synth.hpp"

namespace tspt {

struct CorpusSpec {
  std::size_t speakers = 8;
  std::size_t utts_per_speaker = 10;
  double min_duration_s = 2.0;
  double max_duration_s = 4.0;
  std::uint64_t seed = 1;
  int sample_rate = kDefaultSampleRate;
};

/// A generated corpus held in memory. Inventory paths are `wav/<id>.wav`
/// relative to wherever the corpus gets written.
struct SyntheticCorpus {
  SpeakerInventory inventory;
  AudioStore audio;
  std::map<UtteranceId, std::string> transcripts;
  std::vector<SpeakerProfile> profiles;
};

/// Utterance ids are `spkNN_uttMM`, speaker ids `spkNN`.
SyntheticCorpus make_synthetic_corpus(const CorpusSpec& spec);

/// Writes wav/, manifest.tsv, transcripts.tsv and vocab.txt under `dir` and
/// rewrites the inventory paths to the written files.
void write_corpus(SyntheticCorpus& corpus, const std::filesystem::path& dir);

}  // namespace tspt
