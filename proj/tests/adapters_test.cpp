// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "tspt/adapters/adapters.hpp"
#include "tspt/corpus/synth.hpp"
#include "tspt/error.hpp"
#include "tspt/numcore/ops.hpp"

namespace {

using namespace tspt;

Waveform noise(std::size_t n, std::uint64_t seed) {
  Rng r(seed);
  Waveform w;
  w.samples.resize(n);
  for (auto& s : w.samples) s = r.uniform(-0.3, 0.3);
  return w;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
  return d;
}

void fill_random(Tensor& t, Rng& r, double scale = 0.2) {
  for (auto& x : t.mutable_data()) x = r.normal(0.0, scale);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Direct per-element recomputation of emb W + b.
std::vector<double> project(const std::vector<double>& emb, const Tensor& w, const Tensor& b) {
  const std::size_t e = w.dim(0), d = w.dim(1);
  std::vector<double> out(b.data().begin(), b.data().end());
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < e; ++i) out[j] += emb[i] * w.at(i, j);
  }
  return out;
}

TEST(Embedding, SilenceAndDeterminism) {
  Waveform silent;
  silent.samples.assign(8000, 0.0);
  const auto e = extract_embedding(silent);
  ASSERT_EQ(e.size(), 80u);
  for (std::size_t i = 0; i < 40; ++i) {
    EXPECT_NEAR(e[i], std::log(1e-10), 1e-9);
    EXPECT_EQ(e[40 + i], 0.0);
  }
  const auto y = noise(16000, 1);
  EXPECT_EQ(extract_embedding(y), extract_embedding(y));
  EXPECT_THROW(extract_embedding(noise(100, 1)), DataError);
}

TEST(Embedding, SeparatesSpeakers) {
  auto low = make_speaker_profile(0, 2, 1), high = make_speaker_profile(1, 2, 1);
  low.f0_hz = 120.0;
  high.f0_hz = 220.0;
  const auto a1 = extract_embedding(synth_utterance(low, 2.0, 10));
  const auto a2 = extract_embedding(synth_utterance(low, 2.0, 11));
  const auto b1 = extract_embedding(synth_utterance(high, 2.0, 12));
  EXPECT_LT(cosine(a1, b1), cosine(a1, a2));
}

TEST(AdaptAdd, IdentityAtInitAndDirectRecompute) {
  Rng r(2);
  const auto x = tspt::testing::random_tensor(r, {7, 6});
  const auto emb = tspt::testing::random_tensor(r, {1, 5});
  auto p = make_adapter_params(AdapterKind::Add, 5, 6);
  EXPECT_TRUE(tspt::testing::bit_equal(adapt_add(x, emb, p).data(), x.data()));
  EXPECT_TRUE(tspt::testing::bit_equal(adapt_add(x, Tensor::zeros({1, 5}), p).data(), x.data()));

  fill_random(p.shift_w, r);
  fill_random(p.shift_b, r);
  const auto out = adapt_add(x, emb, p);
  const auto proj = project(emb.to_vector(), p.shift_w, p.shift_b);
  for (std::size_t t = 0; t < 7; ++t) {
    for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(out.at(t, d), x.at(t, d) + proj[d], 1e-12);
  }
  auto film = make_adapter_params(AdapterKind::FiLM, 5, 6);
  EXPECT_THROW(adapt_add(x, emb, film), ConfigError);
}

TEST(AdaptFilm, IdentityScalingAndRecompute) {
  Rng r(3);
  auto p = make_adapter_params(AdapterKind::FiLM, 4, 8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = tspt::testing::random_tensor(r, {5, 8}, -100, 100);
    const auto emb = tspt::testing::random_tensor(r, {1, 4}, -10, 10);
    EXPECT_TRUE(tspt::testing::bit_equal(adapt_film(x, emb, p).data(), x.data()));
  }
  const auto x = tspt::testing::random_tensor(r, {5, 8});
  const auto emb = tspt::testing::random_tensor(r, {1, 4});
  auto twice = p;
  twice.scale_b = Tensor::full({8}, 1.0);
  const auto doubled = adapt_film(x, emb, twice);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(doubled.data()[i], 2.0 * x.data()[i]);

  for (Tensor* t : {&p.scale_w, &p.scale_b, &p.shift_w, &p.shift_b}) fill_random(*t, r);
  const auto out = adapt_film(x, emb, p);
  const auto w = project(emb.to_vector(), p.scale_w, p.scale_b);
  const auto b = project(emb.to_vector(), p.shift_w, p.shift_b);
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t d = 0; d < 8; ++d) {
      EXPECT_NEAR(out.at(t, d), (1.0 + w[d]) * x.at(t, d) + b[d], 1e-12);
    }
  }
}

TEST(AdaptCln, IdentityDegenerateAndRecompute) {
  Rng r(4);
  const auto x = tspt::testing::random_tensor(r, {6, 8});
  const auto emb = tspt::testing::random_tensor(r, {1, 3});
  auto gamma = tspt::testing::random_tensor(r, {8}, 0.5, 1.5);
  auto beta = tspt::testing::random_tensor(r, {8});
  auto p = make_adapter_params(AdapterKind::CLN, 3, 8);
  for (double eps : {0.0, 1e-5}) {
    EXPECT_TRUE(tspt::testing::bit_equal(adapt_cln(x, emb, gamma, beta, p, eps).data(),
                                         ops::layer_norm(x, gamma, beta, eps).data()));
  }
  const auto flat = Tensor::full({2, 8}, 3.0);
  EXPECT_THROW(adapt_cln(flat, emb, gamma, beta, p), NumericalError);

  for (Tensor* t : {&p.scale_w, &p.scale_b, &p.shift_w, &p.shift_b}) fill_random(*t, r);
  const auto out = adapt_cln(x, emb, gamma, beta, p);
  const auto w = project(emb.to_vector(), p.scale_w, p.scale_b);
  const auto b = project(emb.to_vector(), p.shift_w, p.shift_b);
  for (std::size_t t = 0; t < 6; ++t) {
    double mu = 0, var = 0;
    for (std::size_t d = 0; d < 8; ++d) mu += x.at(t, d) / 8.0;
    for (std::size_t d = 0; d < 8; ++d) var += (x.at(t, d) - mu) * (x.at(t, d) - mu) / 8.0;
    const double sigma = std::sqrt(var);
    for (std::size_t d = 0; d < 8; ++d) {
      const double want = ((1.0 + w[d]) * gamma.data()[d] + b[d]) * (x.at(t, d) - mu) / sigma +
                          beta.data()[d];
      EXPECT_NEAR(out.at(t, d), want, 1e-12);
    }
  }
}

struct KindCase {
  AdapterKind kind;
  AdapterSite site;
};

std::vector<KindCase> kinds() {
  return {{AdapterKind::Add, parse_adapter_site("post_cnn")},
          {AdapterKind::FiLM, parse_adapter_site("post_cnn")},
          {AdapterKind::CLN, parse_adapter_site("layer0_ln")}};
}

TEST(InsertAdapter, IdentityAtInitAndCounts) {
  const auto base = init_model(tiny_model_config(8));
  const auto y = noise(16000, 5), e = noise(20000, 6);
  const auto emb = extract_embedding(e);
  Rng r(1);
  const auto mask = sample_masks(49, r);
  const auto want = forward(base, y, {.enrollment = &e, .mask = &mask}).logits;
  for (const auto& k : kinds()) {
    const auto s = insert_adapter(base, k.kind, k.site);
    const auto got = forward(s, y, {.enrollment = &e, .mask = &mask, .embedding = &emb}).logits;
    EXPECT_LT(max_abs_diff(got, want), 1e-10) << to_string(k.kind);
    EXPECT_EQ(s.parameter_count() - base.parameter_count(),
              adapter_parameter_count(k.kind, 80, base.config.dim));
    EXPECT_THROW(forward(s, y, {.enrollment = &e}), ConfigError);
  }
  EXPECT_EQ(adapter_parameter_count(AdapterKind::Add, 80, 64), 5184u);
  const auto big = init_model(ModelConfig{});
  EXPECT_EQ(insert_adapter(big, AdapterKind::Add, parse_adapter_site("post_cnn")).parameter_count() -
                big.parameter_count(),
            5184u);
}

TEST(InsertAdapter, InvalidSites) {
  const auto base = init_model(tiny_model_config(8));
  EXPECT_THROW(insert_adapter(base, AdapterKind::CLN, parse_adapter_site("layer1_ln")), ConfigError);
  EXPECT_THROW(insert_adapter(base, AdapterKind::CLN, parse_adapter_site("post_cnn")), ConfigError);
  EXPECT_THROW(insert_adapter(base, AdapterKind::Add, parse_adapter_site("layer0_ln")), ConfigError);
  EXPECT_THROW(insert_adapter(base, AdapterKind::FiLM, parse_adapter_site("none")), ConfigError);
  EXPECT_THROW(parse_adapter_site("layerX_ln"), ConfigError);
  const auto once = insert_adapter(base, AdapterKind::Add, parse_adapter_site("post_cnn"));
  EXPECT_THROW(insert_adapter(once, AdapterKind::FiLM, parse_adapter_site("post_cnn")), ConfigError);
}

TEST(InsertAdapter, GradientsReachEveryAdapterParameter) {
  const auto base = init_model(tiny_model_config(8));
  const auto y = noise(16000, 7), e = noise(16000, 8);
  const auto emb = extract_embedding(e);
  Rng r(2);
  const auto mask = sample_masks(49, r);
  std::vector<int> labels(49);
  for (auto& l : labels) l = static_cast<int>(r.uniform_int(0, 7));
  for (const auto& k : kinds()) {
    const auto s = insert_adapter(base, k.kind, k.site);
    auto loss = masked_ce_loss(
        forward(s, y, {.enrollment = &e, .mask = &mask, .embedding = &emb}).logits, labels, mask);
    loss.backward();
    for (const auto& name : s.names_with_prefix("adapter.")) {
      double norm = 0.0;
      for (double g : s.param(name).grad()) norm += g * g;
      EXPECT_GT(norm, 0.0) << name;
    }
  }
}

TEST(InsertAdapter, SurvivesCheckpointRoundTrip) {
  const auto s = insert_adapter(init_model(tiny_model_config(8)), AdapterKind::CLN,
                                parse_adapter_site("layer0_ln"));
  const auto path = std::filesystem::temp_directory_path() / "tspt_adapter.ckpt";
  save_model(path, s);
  const auto back = load_model(path);
  EXPECT_EQ(back.config.adapter, AdapterKind::CLN);
  EXPECT_EQ(back.params.size(), s.params.size());
  std::filesystem::remove(path);
}

TEST(EmbeddingSidecar, RoundTrip) {
  const std::map<std::string, std::vector<double>> in{{"a", {1.0, -2.5, 1e-300}}, {"bb", {}}};
  const auto path = std::filesystem::temp_directory_path() / "tspt_emb.bin";
  save_embeddings(path, in);
  EXPECT_EQ(load_embeddings(path), in);
  std::filesystem::remove(path);
}

}  // namespace
