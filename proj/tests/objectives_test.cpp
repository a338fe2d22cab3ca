// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "ctc_oracle.hpp"
#include "test_util.hpp"
#include "tspt/error.hpp"
#include "tspt/numcore/gradcheck.hpp"
#include "tspt/numcore/ops.hpp"
#include "tspt/objectives/objectives.hpp"

namespace {

using namespace tspt;
using tspt::testing::brute_best_path;
using tspt::testing::brute_ctc_nll;
using tspt::testing::collapse;
using tspt::testing::for_each_path;

Tensor log_probs(Rng& r, std::size_t t, std::size_t v, bool grad = false) {
  auto x = tspt::testing::random_tensor(r, {t, v}, -2.0, 2.0);
  auto lp = ops::log_softmax(x).to_vector();
  return Tensor::from({t, v}, std::move(lp), grad);
}

TEST(Masks, HundredFramesGivesEightStarts) {
  Rng r(1);
  const auto m = sample_masks(100, r);
  EXPECT_EQ(m.spans.size(), 8u);
  EXPECT_LE(m.masked.size(), 80u);
  for (auto [s, l] : m.spans) EXPECT_LE(l, kMaskSpan);
}

TEST(Masks, ShortSequenceTruncates) {
  Rng r(2);
  const auto m = sample_masks(5, r);
  ASSERT_EQ(m.spans.size(), 1u);
  EXPECT_LE(m.spans[0].first + m.spans[0].second, 5u);
  EXPECT_GE(m.masked.size(), 1u);
}

TEST(Masks, DeterministicAndCoverageBound) {
  for (std::int64_t t = 1; t < 400; t += 7) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      Rng a(s), b(s);
      const auto m = sample_masks(t, a);
      ASSERT_EQ(m, sample_masks(t, b));
      ASSERT_LE(static_cast<double>(m.masked.size()) / t, 0.8 + 9.0 / t);
      // Union of spans equals the masked set.
      std::vector<char> hit(static_cast<std::size_t>(t), 0);
      for (auto [st, l] : m.spans) {
        for (std::size_t i = st; i < st + l; ++i) hit[i] = 1;
      }
      std::vector<std::size_t> want;
      for (std::size_t i = 0; i < hit.size(); ++i) {
        if (hit[i]) want.push_back(i);
      }
      ASSERT_EQ(m.masked, want);
    }
  }
  Rng r(0);
  EXPECT_THROW(sample_masks(0, r), ConfigError);
}

TEST(ApplyMasks, RowsZeroedOthersUntouched) {
  Rng r(3);
  const auto x = tspt::testing::random_tensor(r, {20, 4});
  EXPECT_TRUE(tspt::testing::bit_equal(apply_masks(x, MaskSpec{20, {}, {}}).data(), x.data()));

  const auto all = apply_masks(x, mask_from_spans(20, {{0, 20}}));
  for (double v : all.data()) EXPECT_EQ(std::bit_cast<std::uint64_t>(v), 0u);

  const auto y = apply_masks(x, mask_from_spans(20, {{3, 10}}));
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      if (i >= 3 && i <= 12) {
        EXPECT_EQ(y.at(i, c), 0.0);
      } else {
        EXPECT_EQ(std::bit_cast<std::uint64_t>(y.at(i, c)),
                  std::bit_cast<std::uint64_t>(x.at(i, c)));
      }
    }
  }
  MaskSpec bad{20, {25}, {}};
  EXPECT_THROW(apply_masks(x, bad), ShapeError);
}

TEST(MaskedCe, UniformLogitsGiveLnK) {
  const auto logits = Tensor::zeros({30, 16});
  std::vector<int> labels(30, 5);
  Rng r(0);
  EXPECT_NEAR(masked_ce_loss(logits, labels, sample_masks(30, r)).item(), std::log(16.0), 1e-12);
}

TEST(MaskedCe, UnmaskedLabelsIrrelevantAndMatchOracle) {
  Rng r(4);
  const auto logits = tspt::testing::random_tensor(r, {40, 7}, -3, 3, true);
  std::vector<int> labels(40);
  for (auto& l : labels) l = static_cast<int>(r.uniform_int(0, 6));
  const auto mask = sample_masks(40, r);
  const auto loss = masked_ce_loss(logits, labels, mask);

  auto other = labels;
  std::vector<char> is_masked(40, 0);
  for (auto i : mask.masked) is_masked[i] = 1;
  for (std::size_t i = 0; i < 40; ++i) {
    if (!is_masked[i]) other[i] = (other[i] + 3) % 7;
  }
  EXPECT_EQ(std::bit_cast<std::uint64_t>(masked_ce_loss(logits, other, mask).item()),
            std::bit_cast<std::uint64_t>(loss.item()));

  double oracle = 0.0;
  for (auto i : mask.masked) {
    double z = 0.0;
    for (std::size_t k = 0; k < 7; ++k) z += std::exp(logits.at(i, k));
    oracle += std::log(z) - logits.at(i, static_cast<std::size_t>(labels[i]));
  }
  oracle /= static_cast<double>(mask.masked.size());
  EXPECT_NEAR(loss.item(), oracle, 1e-12);

  Tensor l2 = loss;
  l2.backward();
  const auto& g = logits.grad();
  for (std::size_t i = 0; i < 40; ++i) {
    if (is_masked[i]) continue;
    for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(g[i * 7 + k], 0.0);
  }
}

TEST(MaskedCe, Errors) {
  const auto logits = Tensor::zeros({4, 3});
  std::vector<int> labels{0, 1, 2, 0};
  EXPECT_THROW(masked_ce_loss(logits, labels, MaskSpec{4, {}, {}}), DataError);
  std::vector<int> bad{0, 1, 3, 0};
  EXPECT_THROW(masked_ce_loss(logits, bad, mask_from_spans(4, {{0, 4}})), DataError);
}

TEST(Ctc, SingleTokenTwoFrames) {
  const double h = std::log(0.5);
  const auto lp = Tensor::from({2, 2}, {h, h, h, h});
  const std::vector<int> target{1};
  EXPECT_NEAR(ctc_loss(lp, target).item(), -std::log(0.75), 1e-12);
}

TEST(Ctc, EmptyTargetIsAllBlank) {
  Rng r(5);
  const auto lp = log_probs(r, 6, 3);
  double want = 0.0;
  for (std::size_t t = 0; t < 6; ++t) want -= lp.at(t, 0);
  EXPECT_NEAR(ctc_loss(lp, std::vector<int>{}).item(), want, 1e-12);
}

TEST(Ctc, InfeasibleTargetIsInfinite) {
  Rng r(6);
  const auto lp = log_probs(r, 2, 4);
  EXPECT_TRUE(std::isinf(ctc_loss(lp, std::vector<int>{1, 2, 3}).item()));
  // Repeats need a separating blank.
  EXPECT_TRUE(std::isinf(ctc_loss(lp, std::vector<int>{1, 1}).item()));
  EXPECT_EQ(ctc_min_frames(std::vector<int>{1, 1, 2}), 4u);
}

TEST(Ctc, MatchesExhaustiveEnumeration) {
  Rng r(7);
  for (std::size_t t = 1; t <= 8; ++t) {
    for (std::size_t v = 2; v <= 3; ++v) {
      for (std::size_t u = 0; u <= 3; ++u) {
        const auto lp = log_probs(r, t, v);
        std::vector<int> target(u);
        for (auto& k : target) k = static_cast<int>(r.uniform_int(1, static_cast<std::int64_t>(v) - 1));
        if (ctc_min_frames(target) > t) continue;
        EXPECT_NEAR(ctc_loss(lp, target).item(), brute_ctc_nll(lp, target), 1e-10)
            << "T=" << t << " V=" << v << " U=" << u;
      }
    }
  }
}

TEST(Ctc, GradientPassesFiniteDifference) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    Rng r(100 + s);
    const auto lp = log_probs(r, 5, 3, true);
    const std::vector<int> target{1, 2};
    const double err = finite_diff_check(
        [&](const Tensor& x) { return ctc_loss(x, target); }, lp, 1e-6);
    EXPECT_LT(err, 1e-5);
  }
  // Through log_softmax.
  Rng r(9);
  const auto raw = tspt::testing::random_tensor(r, {6, 4}, -2, 2, true);
  const std::vector<int> target{3, 3, 1};
  EXPECT_LT(finite_diff_check(
                [&](const Tensor& x) { return ctc_loss(ops::log_softmax(x), target); }, raw, 1e-6),
            1e-5);
}

TEST(Ctc, AlphaEntriesAreLogProbabilities) {
  Rng r(10);
  const auto lp = log_probs(r, 7, 4);
  const auto tab = ctc_forward(lp, std::vector<int>{1, 3});
  EXPECT_EQ(tab.states, 5u);
  for (double a : tab.log_alpha) EXPECT_LE(a, 0.0);
}

TEST(CtcDecode, CollapseThenStrip) {
  auto one_hot = [](const std::vector<int>& seq, std::size_t v) {
    std::vector<double> x(seq.size() * v, -5.0);
    for (std::size_t t = 0; t < seq.size(); ++t) x[t * v + static_cast<std::size_t>(seq[t])] = -0.1;
    return Tensor::from({seq.size(), v}, std::move(x));
  };
  EXPECT_EQ(ctc_decode(one_hot({1, 1, 0, 1}, 3)), (std::vector<int>{1, 1}));
  EXPECT_TRUE(ctc_decode(one_hot({0, 0, 0}, 3)).empty());
}

TEST(CtcDecode, MatchesExhaustiveBestPath) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng r(200 + s);
    const auto lp = log_probs(r, 6, 4);
    double best = -1e300;
    std::vector<int> best_path;
    for_each_path(6, 4, [&](const std::vector<int>& path) {
      double sc = 0.0;
      for (std::size_t t = 0; t < 6; ++t) sc += lp.at(t, static_cast<std::size_t>(path[t]));
      if (sc > best) {
        best = sc;
        best_path = path;
      }
    });
    EXPECT_EQ(ctc_decode(lp), collapse(best_path));
  }
}

TEST(Wer, Examples) {
  using W = std::vector<std::string>;
  EXPECT_EQ(wer(W{"a", "b"}, W{"a", "b"}), 0.0);
  EXPECT_NEAR(wer(W{"a", "c"}, W{"a", "b", "c"}), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(wer(W{"b"}, W{"a"}), 1.0);
  EXPECT_EQ(wer(W{}, W{"a", "b"}), 1.0);
  EXPECT_THROW(wer(W{"a"}, W{}), DataError);
}

TEST(Wer, SubstitutionSymmetry) {
  Rng r(11);
  const std::vector<std::string> words{"a", "e", "ia", "ou", "u"};
  for (int i = 0; i < 200; ++i) {
    std::vector<std::string> a(static_cast<std::size_t>(r.uniform_int(1, 6))),
        b(static_cast<std::size_t>(r.uniform_int(1, 6)));
    for (auto& w : a) w = words[static_cast<std::size_t>(r.uniform_int(0, 4))];
    for (auto& w : b) w = words[static_cast<std::size_t>(r.uniform_int(0, 4))];
    EXPECT_NEAR(wer(a, b) * b.size(), wer(b, a) * a.size(), 1e-12);
  }
}

}  // namespace
