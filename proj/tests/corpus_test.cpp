// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "test_util.hpp"
#include "tspt/corpus/features.hpp"
#include "tspt/corpus/inventory.hpp"
#include "tspt/corpus/synth.hpp"
#include "tspt/corpus/synthetic_corpus.hpp"
#include "tspt/corpus/vocab.hpp"
#include "tspt/corpus/wav.hpp"
#include "tspt/error.hpp"

using namespace tspt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "tspt_corpus_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_raw_wav(const fs::path& p, std::uint16_t format, std::uint16_t channels,
                   std::uint16_t bits, std::size_t frames) {
  std::ofstream os(p, std::ios::binary);
  auto put32 = [&](std::uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); };
  auto put16 = [&](std::uint16_t v) { os.write(reinterpret_cast<char*>(&v), 2); };
  const std::uint32_t bytes = static_cast<std::uint32_t>(frames * channels * bits / 8);
  os.write("RIFF", 4);
  put32(36 + bytes);
  os.write("WAVEfmt ", 8);
  put32(16);
  put16(format);
  put16(channels);
  put32(16000);
  put32(16000 * channels * bits / 8);
  put16(static_cast<std::uint16_t>(channels * bits / 8));
  put16(bits);
  os.write("data", 4);
  put32(bytes);
  std::string zeros(bytes, '\0');
  os.write(zeros.data(), bytes);
}

// Index of the largest magnitude bin of a direct 1024-point DFT.
std::size_t dft_peak_bin(const std::vector<double>& x, std::size_t offset) {
  constexpr std::size_t n = 1024;
  std::size_t best = 1;
  double best_mag = -1.0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double hann = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / (n - 1));
      acc += x[offset + i] * hann *
             std::polar(1.0, -2.0 * std::numbers::pi * double(k * i) / double(n));
    }
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best = k;
    }
  }
  return best;
}

}  // namespace

TEST(Wav, ZeroFileLoadsAsSilence) {
  auto dir = scratch("zero");
  write_raw_wav(dir / "z.wav", 1, 1, 16, 16000);
  auto w = load_wav(dir / "z.wav");
  EXPECT_EQ(w.size(), 16000u);
  EXPECT_EQ(w.sample_rate, 16000);
  for (double s : w.samples) EXPECT_EQ(s, 0.0);
}

TEST(Wav, RoundTripWithinQuantizationBound) {
  auto dir = scratch("roundtrip");
  Rng rng(8);
  Waveform w;
  for (int i = 0; i < 4000; ++i) w.samples.push_back(rng.uniform(-1.0, 1.0));
  w.samples.push_back(1.0);
  w.samples.push_back(-1.0);
  EXPECT_EQ(save_wav(dir / "n.wav", w), 0u);
  auto back = load_wav(dir / "n.wav");
  ASSERT_EQ(back.size(), w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_LE(std::abs(back.samples[i] - w.samples[i]), 1.0 / 32768.0);
  }
}

TEST(Wav, ClampsAndCountsOutOfRange) {
  auto dir = scratch("clamp");
  Waveform w{{1.5, -2.0, 0.25}, 16000};
  EXPECT_EQ(save_wav(dir / "c.wav", w), 2u);
  auto back = load_wav(dir / "c.wav");
  EXPECT_NEAR(back.samples[0], 32767.0 / 32768.0, 1e-12);
  EXPECT_EQ(back.samples[1], -1.0);
}

TEST(Wav, RejectsUnsupportedInputs) {
  auto dir = scratch("reject");
  write_raw_wav(dir / "u8.wav", 1, 1, 8, 10);
  try {
    load_wav(dir / "u8.wav");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported encoding"), std::string::npos);
  }
  write_raw_wav(dir / "st.wav", 1, 2, 16, 10);
  EXPECT_THROW(load_wav(dir / "st.wav"), DataError);
  write_raw_wav(dir / "float.wav", 3, 1, 32, 10);
  EXPECT_THROW(load_wav(dir / "float.wav"), DataError);
  std::ofstream(dir / "junk.wav") << "not a wav";
  EXPECT_THROW(load_wav(dir / "junk.wav"), DataError);
}

TEST(Synth, DeterministicAndBounded) {
  auto p = make_speaker_profile(3, 8, 1);
  auto a = synth_utterance(p, 2.5, 77);
  auto b = synth_utterance(p, 2.5, 77);
  EXPECT_TRUE(tspt::testing::bit_equal(a.samples, b.samples));
  EXPECT_EQ(a.size(), 40000u);
  EXPECT_GE(rms(a), 0.05);
  EXPECT_LE(rms(a), 0.5);
  EXPECT_FALSE(a == synth_utterance(p, 2.5, 78));
}

TEST(Synth, RejectsNonPositiveDuration) {
  EXPECT_THROW(synth_utterance(SpeakerProfile{}, 0.0, 1), ConfigError);
  EXPECT_THROW(synth_utterance(SpeakerProfile{}, -1.0, 1), ConfigError);
}

TEST(Synth, DominantPeakIsTheFundamental) {
  const double bin_hz = 16000.0 / 1024.0;
  for (double f0 : {120.0, 220.0}) {
    SpeakerProfile p;
    p.f0_hz = f0;
    auto w = synth_utterance(p, 2.0, 5);
    auto plan = plan_utterance(w.size(), 5);
    int checked = 0;
    for (const auto& seg : plan.segments) {
      if (seg.phone == 0 || seg.length < 1400) continue;
      const auto bin = dft_peak_bin(w.samples, seg.start + (seg.length - 1024) / 2);
      EXPECT_LE(std::abs(bin * bin_hz - f0), bin_hz) << "f0 " << f0 << " phone " << seg.phone;
      ++checked;
    }
    EXPECT_GT(checked, 0);
  }
}

TEST(Synth, TranscriptFollowsPlan) {
  auto plan = plan_utterance(48000, 3);
  auto text = plan.transcript();
  EXPECT_FALSE(text.empty());
  std::size_t phones = 0;
  for (const auto& s : plan.segments) phones += s.phone != 0;
  std::size_t letters = 0;
  for (char c : text) letters += c != ' ';
  EXPECT_EQ(phones, letters);
  std::size_t covered = 0;
  for (const auto& s : plan.segments) covered += s.length;
  EXPECT_EQ(covered, 48000u);
}

TEST(Logmel, FrameCountAndSilence) {
  Waveform silence{std::vector<double>(16000, 0.0), 16000};
  auto fm = logmel(silence);
  EXPECT_EQ(fm.frames, 98u);
  EXPECT_EQ(fm.dim, 40u);
  for (double v : fm.values) EXPECT_EQ(v, std::log(1e-10));
}

TEST(Logmel, Errors) {
  Waveform w{std::vector<double>(1000, 0.1), 16000};
  FeatureConfig cfg;
  cfg.n_mels = 0;
  EXPECT_THROW(logmel(w, cfg), ConfigError);
  EXPECT_THROW(logmel(Waveform{std::vector<double>(399, 0.0), 16000}), DataError);
}

TEST(Logmel, ShiftCovariantByOneHop) {
  auto w = synth_utterance(make_speaker_profile(0, 2, 1), 1.0, 9);
  Waveform delayed = w;
  delayed.samples.insert(delayed.samples.begin(), 160, 0.0);
  delayed.samples.resize(w.size());
  auto a = logmel(w), b = logmel(delayed);
  ASSERT_EQ(a.frames, b.frames);
  for (std::size_t t = 0; t + 1 < a.frames; ++t) {
    for (std::size_t d = 0; d < a.dim; ++d) {
      ASSERT_EQ(b.at(t + 1, d), a.at(t, d)) << t << "," << d;
    }
  }
}

TEST(Inventory, SmallManifest) {
  auto dir = scratch("small");
  Waveform w{std::vector<double>(800, 0.1), 16000};
  for (auto id : {"u1", "u2", "u3"}) save_wav(dir / (std::string(id) + ".wav"), w);
  std::ofstream(dir / "m.tsv") << "u2\tA\tu2.wav\t800\nu1\tA\tu1.wav\t800\nu3\tB\tu3.wav\t800\n";
  auto inv = build_inventory(dir / "m.tsv");
  EXPECT_EQ(inv.speaker_count(), 2u);
  EXPECT_EQ(inv.groups.at("A"), (std::vector<UtteranceId>{"u1", "u2"}));
  EXPECT_EQ(inv.groups.at("B").size(), 1u);
  EXPECT_EQ(inv.utterance_ids(), (std::vector<UtteranceId>{"u1", "u2", "u3"}));

  write_manifest(inv, dir / "copy" / "m2.tsv");
  EXPECT_EQ(build_inventory(dir / "copy" / "m2.tsv"), inv);
}

TEST(Inventory, Errors) {
  auto dir = scratch("errors");
  save_wav(dir / "a.wav", Waveform{std::vector<double>(800, 0.1), 16000});
  std::ofstream(dir / "dup.tsv") << "a\tS\ta.wav\t800\na\tT\ta.wav\t800\n";
  EXPECT_THROW(build_inventory(dir / "dup.tsv"), DataError);
  std::ofstream(dir / "missing.tsv") << "a\tS\tnope.wav\t800\n";
  EXPECT_THROW(build_inventory(dir / "missing.tsv"), DataError);
  std::ofstream(dir / "cols.tsv") << "a\tS\ta.wav\n";
  EXPECT_THROW(build_inventory(dir / "cols.tsv"), DataError);

  SpeakerInventory inv;
  inv.groups["ghost"] = {};
  EXPECT_THROW(inv.validate(), DataError);
}

TEST(Inventory, LabelsAndPairsRoundTrip) {
  auto dir = scratch("labels");
  std::map<UtteranceId, LabelSequence> labels{{"x", {0, 3, 3, 15}}, {"y", {2}}};
  write_labels(labels, dir / "l.tsv");
  EXPECT_EQ(load_labels(dir / "l.tsv"), labels);
  std::map<UtteranceId, std::string> pairs{{"m1", "e1"}, {"m2", "a e"}};
  write_pairs(pairs, dir / "p.tsv");
  EXPECT_EQ(load_pairs(dir / "p.tsv"), pairs);

  SpeakerInventory inv;
  inv.add("x", "S", "x.wav", 10);
  EXPECT_THROW(attach_labels(inv, labels), DataError);
}

TEST(SyntheticCorpus, DefaultGeneratorContract) {
  auto dir = scratch("gen");
  auto corpus = make_synthetic_corpus({});
  write_corpus(corpus, dir);
  auto inv = build_inventory(dir / "manifest.tsv");
  EXPECT_EQ(inv.speaker_count(), 8u);
  EXPECT_EQ(inv.utterance_count(), 80u);
  for (const auto& [id, n] : inv.num_samples) {
    EXPECT_GE(n, 32000u);
    EXPECT_LE(n, 64000u);
  }
  EXPECT_EQ(load_pairs(dir / "transcripts.tsv").size(), 80u);
  EXPECT_EQ(Vocabulary::load(dir / "vocab.txt"), Vocabulary::synthetic());

  // Speakers are separable by their mean log-mel vectors.
  std::vector<std::vector<double>> means;
  for (const auto& [spk, ids] : corpus.inventory.groups) {
    std::vector<double> m(40, 0.0);
    std::size_t frames = 0;
    for (const auto& id : ids) {
      auto fm = logmel(corpus.audio.get(id));
      for (std::size_t t = 0; t < fm.frames; ++t)
        for (std::size_t d = 0; d < 40; ++d) m[d] += fm.at(t, d);
      frames += fm.frames;
    }
    for (auto& v : m) v /= double(frames);
    means.push_back(m);
  }
  for (std::size_t i = 0; i < means.size(); ++i) {
    for (std::size_t j = i + 1; j < means.size(); ++j) {
      double d2 = 0;
      for (std::size_t k = 0; k < 40; ++k) d2 += std::pow(means[i][k] - means[j][k], 2);
      EXPECT_GT(std::sqrt(d2), 0.0) << i << " vs " << j;
    }
  }
}

TEST(Vocabulary, EncodeDecode) {
  auto v = Vocabulary::synthetic();
  EXPECT_EQ(v.token(0), "<b>");
  auto ids = v.encode("ai  o");
  EXPECT_EQ(v.decode(ids), "ai o");
  EXPECT_THROW(v.encode("xyz"), DataError);
  EXPECT_THROW(Vocabulary({"a", "b"}), DataError);
  EXPECT_EQ(split_words("  a  bc d "), (std::vector<std::string>{"a", "bc", "d"}));
}
