// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "test_util.hpp"
#include "tspt/error.hpp"
#include "tspt/mixer/mixer.hpp"

namespace {

using namespace tspt;
namespace fs = std::filesystem;

Waveform noise(std::size_t n, std::uint64_t seed, double amp = 0.1) {
  Rng r(seed);
  Waveform w;
  w.samples.resize(n);
  for (auto& s : w.samples) s = r.uniform(-amp, amp);
  return w;
}

Waveform constant(std::size_t n, double v) {
  Waveform w;
  w.samples.assign(n, v);
  return w;
}

double db_ratio(const Waveform& a, const Waveform& b) {
  return 10.0 * std::log10(energy(a) / energy(b));
}

struct Fixture {
  SpeakerInventory inv;
  AudioStore audio;
};

// speakers x utts, utterance u of speaker s has length len(s, u).
Fixture make_fixture(int speakers, int utts, auto len) {
  Fixture f;
  std::uint64_t seed = 1;
  for (int s = 0; s < speakers; ++s) {
    for (int u = 0; u < utts; ++u) {
      const std::string id = "s" + std::to_string(s) + "_u" + std::to_string(u);
      const std::size_t n = len(s, u);
      f.inv.add(id, "s" + std::to_string(s), id + ".wav", n);
      f.inv.labels[id] = LabelSequence{s, u, s + u};
      f.audio.put(id, noise(n, seed++));
    }
  }
  return f;
}

TEST(Rescale, EqualEnergiesAtZeroDbIsIdentity) {
  const auto y = noise(500, 1);
  const auto out = rescale_interference(y, y, 0.0);
  EXPECT_TRUE(tspt::testing::bit_equal(out.samples, y.samples));
}

TEST(Rescale, GainMatchesClosedForm) {
  // E_main = 4, E_interf = 1.
  EXPECT_NEAR(interference_gain(4.0, 1.0, 0.0), 2.0, 1e-15);
  const auto u = rescale_interference(constant(4, 1.0), constant(1, 1.0), 0.0);
  EXPECT_NEAR(u.samples[0], 2.0, 1e-15);
  EXPECT_NEAR(interference_gain(1.0, 1.0, 10.0), 0.316227766016838, 1e-12);
}

TEST(Rescale, RatioHitsTargetDb) {
  Rng r(3);
  for (int i = 0; i < 200; ++i) {
    const auto y = noise(300 + i, 10 + i, r.uniform(0.01, 1.0));
    const auto u = noise(200 + 2 * i, 1000 + i, r.uniform(0.01, 1.0));
    const double k = r.uniform(-5.0, 5.0);
    EXPECT_NEAR(db_ratio(y, rescale_interference(y, u, k)), k, 1e-9);
  }
}

TEST(Rescale, RejectsZeroEnergy) {
  EXPECT_THROW(rescale_interference(constant(10, 0.0), noise(10, 1), 0.0), DataError);
  EXPECT_THROW(rescale_interference(noise(10, 1), constant(10, 0.0), 0.0), DataError);
}

TEST(MixPair, FullOverlapIsElementwiseSum) {
  const auto y = noise(64, 1), u = noise(64, 2);
  const auto out = overlay(y, u, MixWindow{64, 0, 0});
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(out.samples[i], y.samples[i] + u.samples[i]);
}

TEST(MixPair, WindowClampedToInterfererLength) {
  // With M = 100 and N = 10 every draw of l >= 10 clamps to 10.
  const auto y = noise(100, 1), u = noise(10, 2);
  int clamped = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng r(s);
    const auto w = sample_mix_window(100, 10, r);
    EXPECT_GE(w.length, 1u);
    EXPECT_LE(w.length, 10u);
    EXPECT_LE(w.main_start, 100 - w.length);
    EXPECT_LE(w.interf_start, 10 - w.length);
    clamped += w.length == 10;
  }
  EXPECT_GT(clamped, 150);
}

TEST(MixPair, SamplesOutsideWindowUntouched) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng r(s);
    const auto y = noise(400 + s, s), u = noise(150 + 3 * s, 77 + s);
    auto [out, meta] = mix_pair(y, u, r);
    ASSERT_EQ(out.size(), y.size());
    const auto& w = meta.window;
    ASSERT_GE(w.length, 1u);
    ASSERT_LE(w.length, std::min(y.size(), u.size()));
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (i < w.main_start || i >= w.main_start + w.length) {
        ASSERT_EQ(std::bit_cast<std::uint64_t>(out.samples[i]),
                  std::bit_cast<std::uint64_t>(y.samples[i]));
      } else {
        ASSERT_EQ(out.samples[i],
                  y.samples[i] + meta.gain * u.samples[i - w.main_start + w.interf_start]);
      }
    }
    Waveform scaled = u;
    for (auto& x : scaled.samples) x *= meta.gain;
    EXPECT_NEAR(db_ratio(y, scaled), meta.k_db, 1e-9);
  }
}

TEST(MixPair, RejectsSampleRateMismatch) {
  auto y = noise(10, 1), u = noise(10, 2);
  u.sample_rate = 8000;
  Rng r(0);
  EXPECT_THROW(mix_pair(y, u, r), DataError);
}

TEST(MixPair, Seed42MatchesGolden) {
  const fs::path golden = fs::path(TSPT_TEST_DATA_DIR) / "mix_seed42.json";
  nlohmann::json got = nlohmann::json::array();
  Rng r(42);
  for (int i = 0; i < 8; ++i) {
    const auto y = noise(1000 + 37 * i, 500 + i), u = noise(600 + 91 * i, 900 + i);
    auto [out, meta] = mix_pair(y, u, r);
    got.push_back({{"k_db", meta.k_db},
                   {"l", meta.window.length},
                   {"m", meta.window.main_start},
                   {"n", meta.window.interf_start}});
  }
  if (std::getenv("TSPT_REGEN_GOLDEN")) {
    std::ofstream(golden) << got.dump(2) << '\n';
    GTEST_SKIP() << "regenerated " << golden;
  }
  std::ifstream is(golden);
  ASSERT_TRUE(is) << "missing golden file " << golden;
  const auto want = nlohmann::json::parse(is);
  ASSERT_EQ(want.size(), got.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_NEAR(got[i]["k_db"].get<double>(), want[i]["k_db"].get<double>(), 1e-12);
    EXPECT_EQ(got[i]["l"], want[i]["l"]);
    EXPECT_EQ(got[i]["m"], want[i]["m"]);
    EXPECT_EQ(got[i]["n"], want[i]["n"]);
  }
}

void check_sample(const Fixture& f, const TrainSample& s) {
  const auto& m = s.meta;
  const auto& spk = f.inv.speaker_of.at(m.main_id);
  EXPECT_EQ(f.inv.speaker_of.at(m.enrollment_id), spk);
  EXPECT_NE(m.enrollment_id, m.main_id);
  EXPECT_NE(f.inv.speaker_of.at(m.interferer_id), spk);
  EXPECT_EQ(s.labels, f.inv.labels.at(m.main_id));
  EXPECT_EQ(s.mixed.size(), f.audio.get(m.main_id).size());
  EXPECT_EQ(s.enrollment, f.audio.get(m.enrollment_id));
  EXPECT_GE(m.k_db, kMinMixDb);
  EXPECT_LE(m.k_db, kMaxMixDb);
}

TEST(SampleBatch, TwoByTwoConstraints) {
  const auto f = make_fixture(2, 2, [](int s, int u) { return 200 + 50 * s + 10 * u; });
  const auto batch = sample_batch(f.inv, f.audio, 4, Rng(5));
  ASSERT_EQ(batch.size(), 4u);
  for (const auto& s : batch) check_sample(f, s);
}

TEST(SampleBatch, ConstraintsHoldOverManyBatches) {
  const auto f = make_fixture(4, 3, [](int s, int u) { return 100 + 13 * s + 7 * u; });
  const Rng base(11);
  for (std::uint64_t b = 0; b < 1000; ++b) {
    for (const auto& s : sample_batch(f.inv, f.audio, 3, base.split({0, b}))) {
      check_sample(f, s);
    }
  }
}

TEST(SampleBatch, SamplesAreOrderIndependent) {
  const auto f = make_fixture(3, 3, [](int, int u) { return 150 + u; });
  const auto big = sample_batch(f.inv, f.audio, 6, Rng(9));
  const auto small = sample_batch(f.inv, f.audio, 3, Rng(9));
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(big[j].mixed, small[j].mixed);
    EXPECT_EQ(big[j].meta.enrollment_id, small[j].meta.enrollment_id);
  }
}

TEST(SampleBatch, InterferersComeFromWholeInventory) {
  const auto f = make_fixture(5, 2, [](int, int) { return 64; });
  std::set<std::string> seen;
  for (std::uint64_t b = 0; b < 200; ++b) {
    for (const auto& s : sample_batch(f.inv, f.audio, 1, Rng(b))) seen.insert(s.meta.interferer_id);
  }
  EXPECT_EQ(seen.size(), 10u);
}

TEST(SampleBatch, Errors) {
  auto one = make_fixture(1, 3, [](int, int) { return 32; });
  EXPECT_THROW(sample_batch(one.inv, one.audio, 1, Rng(0)), DataError);

  auto f = make_fixture(2, 1, [](int, int) { return 32; });
  EXPECT_THROW(sample_batch(f.inv, f.audio, 1, Rng(0)), DataError);

  auto unl = make_fixture(2, 2, [](int, int) { return 32; });
  unl.inv.labels.clear();
  EXPECT_THROW(sample_batch(unl.inv, unl.audio, 1, Rng(0)), DataError);
  EXPECT_NO_THROW(sample_batch(unl.inv, unl.audio, 1, Rng(0), {.require_labels = false}));
}

TEST(SampleBatch, OverlapRatioAndEnergyRatioAreUniform) {
  // Equal lengths so that N >= M always holds.
  const auto f = make_fixture(4, 4, [](int, int) { return 1600; });
  std::vector<double> ratio, k;
  const Rng base(2024);
  for (std::uint64_t b = 0; b < 1000; ++b) {
    for (const auto& s : sample_batch(f.inv, f.audio, 10, base.split({0, b}))) {
      ratio.push_back(static_cast<double>(s.meta.window.length) / s.meta.main_len);
      k.push_back(s.meta.k_db);
    }
  }
  ASSERT_EQ(ratio.size(), 10000u);
  EXPECT_LT(tspt::testing::ks_uniform(ratio, 0.0, 1.0), 0.02);
  EXPECT_LT(tspt::testing::ks_uniform(k, -5.0, 5.0), 0.02);
}

TEST(TruncateEnrollment, ShortIsUnchanged) {
  Rng r(0);
  const auto e = noise(30000, 1);
  EXPECT_EQ(truncate_enrollment(e, kDefaultEnrollSamples, r), e);
}

TEST(TruncateEnrollment, LongIsContiguousWindow) {
  const auto e = noise(64000, 1);
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng r(s);
    const auto out = truncate_enrollment(e, 48000, r);
    ASSERT_EQ(out.size(), 48000u);
    const auto it = std::search(e.samples.begin(), e.samples.end(), out.samples.begin(),
                                out.samples.begin() + 16);
    ASSERT_NE(it, e.samples.end());
    EXPECT_TRUE(std::equal(out.samples.begin(), out.samples.end(), it));
  }
}

TEST(TruncateEnrollment, ForcedStartIsSlice) {
  const auto e = noise(50000, 2);
  const auto out = truncate_enrollment_at(e, 48000, 0);
  EXPECT_TRUE(std::equal(out.samples.begin(), out.samples.end(), e.samples.begin()));
  EXPECT_EQ(out.size(), 48000u);
  Rng r(0);
  EXPECT_THROW(truncate_enrollment(e, 0, r), ConfigError);
}

TEST(MixDump, WritesAuditableEpoch) {
  const fs::path dir = fs::temp_directory_path() / "tspt_mixdump_test";
  fs::remove_all(dir);
  auto f = make_fixture(3, 2, [](int, int u) { return 800 + 100 * u; });
  for (const auto& id : f.inv.utterance_ids()) {
    f.inv.paths[id] = dir / "src" / (id + ".wav");
    fs::create_directories(dir / "src");
    save_wav(f.inv.paths[id], f.audio.get(id));
  }
  std::map<UtteranceId, std::string> tr;
  for (const auto& id : f.inv.utterance_ids()) tr[id] = "a e";
  const auto res = dump_mixtures(f.inv, f.audio, 12, 1, dir / "out", &tr);
  EXPECT_EQ(res.samples, 12u);

  const auto mix = build_inventory(dir / "out" / "manifest.tsv");
  EXPECT_EQ(mix.utterance_count(), 12u);
  const auto enroll = build_inventory(dir / "out" / "enroll_manifest.tsv");
  const auto emap = load_pairs(dir / "out" / "enroll_map.tsv");
  EXPECT_EQ(emap.size(), 12u);
  for (const auto& [id, e] : emap) {
    EXPECT_EQ(enroll.speaker_of.at(e), mix.speaker_of.at(id));
  }
  EXPECT_EQ(load_pairs(dir / "out" / "transcripts.tsv").size(), 12u);

  std::ifstream meta(dir / "out" / "meta.jsonl");
  std::string line;
  int rows = 0;
  while (std::getline(meta, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_LE(j["l"].get<std::size_t>() + j["m"].get<std::size_t>(), j["M"].get<std::size_t>());
    ++rows;
  }
  EXPECT_EQ(rows, 12);
  fs::remove_all(dir);
}

}  // namespace
