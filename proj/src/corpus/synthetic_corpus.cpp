// SPDX-License-Identifier: Apache-2.0
#include "tspt/corpus/synthetic_corpus.hpp"

#include <cmath>
#include <cstdio>

#include "tspt/corpus/vocab.hpp"
#include "tspt/error.hpp"
#include "tspt/rng.hpp"

namespace tspt {

namespace {

std::string two_digits(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02zu", i);
  return buf;
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const CorpusSpec& spec) {
  if (spec.speakers == 0 || spec.utts_per_speaker == 0) {
    throw ConfigError("corpus needs at least one speaker and one utterance");
  }
  if (!(spec.min_duration_s > 0.0) || spec.max_duration_s < spec.min_duration_s) {
    throw ConfigError("invalid corpus duration range");
  }
  SyntheticCorpus corpus;
  for (std::size_t s = 0; s < spec.speakers; ++s) {
    corpus.profiles.push_back(make_speaker_profile(s, spec.speakers, spec.seed));
    const SpeakerId spk = "spk" + two_digits(s);
    for (std::size_t u = 0; u < spec.utts_per_speaker; ++u) {
      const UtteranceId id = spk + "_utt" + two_digits(u);
      Rng rng = Rng(spec.seed).split({11, s, u});
      const double dur = rng.uniform(spec.min_duration_s, spec.max_duration_s);
      const auto n = static_cast<std::size_t>(std::llround(dur * spec.sample_rate));
      const std::uint64_t utt_seed = rng.split(1).seed();
      const auto plan = plan_utterance(n, utt_seed, spec.sample_rate);
      corpus.transcripts[id] = plan.transcript();
      corpus.audio.put(id, render_utterance(corpus.profiles[s], plan, utt_seed,
                                            spec.sample_rate));
      corpus.inventory.add(id, spk, "wav/" + id + ".wav", n);
    }
  }
  corpus.inventory.validate();
  return corpus;
}

void write_corpus(SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "wav");
  for (auto& [id, path] : corpus.inventory.paths) {
    path = (dir / "wav" / (id + ".wav")).lexically_normal();
    save_wav(path, corpus.audio.get(id));
  }
  write_manifest(corpus.inventory, dir / "manifest.tsv");
  write_pairs(corpus.transcripts, dir / "transcripts.tsv");
  Vocabulary::synthetic().save(dir / "vocab.txt");
}

}  // namespace tspt
