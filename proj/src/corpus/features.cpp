// SPDX-License-Identifier: Apache-2.0
#include "tspt/corpus/features.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <numbers>

#include "tspt/error.hpp"

namespace tspt {

namespace {

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }

// Triangular HTK-style filters over the n_fft / 2 + 1 bins.
std::vector<std::vector<double>> mel_filters(std::size_t n_mels, std::size_t n_fft,
                                             int sample_rate) {
  const std::size_t bins = n_fft / 2 + 1;
  const double lo = hz_to_mel(0.0), hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(n_mels + 2);
  for (std::size_t m = 0; m < n_mels + 2; ++m) {
    centers[m] = lo + (hi - lo) * static_cast<double>(m) / static_cast<double>(n_mels + 1);
  }
  std::vector<std::vector<double>> filt(n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < n_mels; ++m) {
    for (std::size_t b = 0; b < bins; ++b) {
      const double mel = hz_to_mel(static_cast<double>(b) * sample_rate / static_cast<double>(n_fft));
      if (mel > centers[m] && mel < centers[m + 2]) {
        filt[m][b] = mel <= centers[m + 1]
                         ? (mel - centers[m]) / (centers[m + 1] - centers[m])
                         : (centers[m + 2] - mel) / (centers[m + 2] - centers[m + 1]);
      }
    }
  }
  return filt;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

std::size_t num_frames(std::size_t num_samples, std::size_t frame_len,
                       std::size_t frame_hop) {
  if (frame_hop == 0 || num_samples < frame_len) return 0;
  return 1 + (num_samples - frame_len) / frame_hop;
}

FeatureMatrix logmel(const Waveform& w, const FeatureConfig& cfg) {
  if (cfg.n_mels == 0) throw ConfigError("logmel: n_mels must be > 0");
  if (cfg.frame_len == 0 || cfg.frame_hop == 0 || cfg.n_fft < cfg.frame_len) {
    throw ConfigError("logmel: invalid frame configuration");
  }
  const std::size_t frames = num_frames(w.size(), cfg.frame_len, cfg.frame_hop);
  if (frames == 0) {
    throw DataError("logmel: waveform of " + std::to_string(w.size()) +
                    " samples is shorter than one frame (" +
                    std::to_string(cfg.frame_len) + ")");
  }
  const std::size_t bins = cfg.n_fft / 2 + 1;
  auto filters = mel_filters(cfg.n_mels, cfg.n_fft, w.sample_rate);
  std::vector<double> window(cfg.frame_len);
  for (std::size_t i = 0; i < cfg.frame_len; ++i) {
    window[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                       static_cast<double>(cfg.frame_len - 1));
  }

  std::unique_ptr<double, FftwDeleter> in(
      static_cast<double*>(fftw_malloc(sizeof(double) * cfg.n_fft)));
  std::unique_ptr<fftw_complex, FftwDeleter> out(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins)));
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(cfg.n_fft), in.get(),
                                        out.get(), FFTW_ESTIMATE);

  FeatureMatrix fm;
  fm.frames = frames;
  fm.dim = cfg.n_mels;
  fm.frame_hop = cfg.frame_hop;
  fm.frame_len = cfg.frame_len;
  fm.values.resize(frames * cfg.n_mels);
  std::vector<double> power(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = w.samples.data() + t * cfg.frame_hop;
    for (std::size_t i = 0; i < cfg.n_fft; ++i) {
      in.get()[i] = i < cfg.frame_len ? src[i] * window[i] : 0.0;
    }
    fftw_execute(plan);
    for (std::size_t b = 0; b < bins; ++b) {
      power[b] = out.get()[b][0] * out.get()[b][0] + out.get()[b][1] * out.get()[b][1];
    }
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t b = 0; b < bins; ++b) e += filters[m][b] * power[b];
      fm.values[t * cfg.n_mels + m] = std::log(e + cfg.floor);
    }
  }
  fftw_destroy_plan(plan);
  return fm;
}

}  // namespace tspt
