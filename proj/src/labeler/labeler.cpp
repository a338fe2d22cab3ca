// SPDX-License-Identifier: Apache-2.0
#include "tspt/labeler/labeler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tspt/error.hpp"
#include "tspt/geometry.hpp"
#include "tspt/kv.hpp"
#include "tspt/numcore/checkpoint.hpp"
#include "tspt/rng.hpp"

namespace tspt {

namespace {

double sqdist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double x = a[i] - b[i];
    s += x * x;
  }
  return s;
}

// Nearest centroid and its squared distance.
std::pair<std::size_t, double> nearest(const double* x, const Codebook& cb) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cb.k; ++c) {
    const double d = sqdist(x, cb.centroid(c), cb.dim);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return {best, best_d};
}

void require_dim(const FeatureMatrix& f, const Codebook& cb) {
  if (f.dim != cb.dim) {
    throw ShapeError("feature dim " + std::to_string(f.dim) + " != codebook dim " +
                     std::to_string(cb.dim));
  }
}

Codebook lloyd(const FeatureMatrix& f, Codebook cb, std::size_t iters) {
  const std::size_t n = f.frames, d = f.dim;
  std::vector<std::size_t> assign(n, 0), prev;
  std::vector<double> dist(n);
  auto assign_all = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::tie(assign[i], dist[i]) = nearest(f.row(i), cb);
      total += dist[i];
    }
    cb.wcss_history.push_back(total);
  };
  cb.wcss_history.clear();
  assign_all();
  for (std::size_t it = 0; it < iters; ++it) {
    std::vector<double> sums(cb.k * d, 0.0);
    std::vector<std::size_t> counts(cb.k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      const double* x = f.row(i);
      for (std::size_t j = 0; j < d; ++j) sums[assign[i] * d + j] += x[j];
    }
    std::vector<char> taken(n, 0);
    for (std::size_t c = 0; c < cb.k; ++c) {
      if (counts[c] > 0) {
        for (std::size_t j = 0; j < d; ++j) {
          cb.centroids[c * d + j] = sums[c * d + j] / static_cast<double>(counts[c]);
        }
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      taken[far] = 1;
      dist[far] = 0.0;
      std::copy_n(f.row(far), d, cb.centroids.begin() + static_cast<std::ptrdiff_t>(c * d));
    }
    prev = assign;
    assign_all();
    if (assign == prev) break;
  }
  return cb;
}

}  // namespace

void Codebook::validate() const {
  if (k == 0 || dim == 0 || centroids.size() != k * dim) {
    throw DataError("codebook: inconsistent shape");
  }
  for (double v : centroids) {
    if (!std::isfinite(v)) throw DataError("codebook: non-finite centroid");
  }
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      if (std::equal(centroid(a), centroid(a) + dim, centroid(b))) {
        throw DataError("codebook: centroids " + std::to_string(a) + " and " +
                        std::to_string(b) + " coincide");
      }
    }
  }
}

FeatureMatrix stack_features(const std::vector<FeatureMatrix>& parts) {
  FeatureMatrix out;
  for (const auto& p : parts) {
    if (p.frames == 0) continue;
    if (out.dim == 0) {
      out.dim = p.dim;
      out.frame_hop = p.frame_hop;
      out.frame_len = p.frame_len;
    } else if (p.dim != out.dim) {
      throw ShapeError("stack_features: mixed feature dims");
    }
    out.values.insert(out.values.end(), p.values.begin(), p.values.end());
    out.frames += p.frames;
  }
  return out;
}

Codebook kmeans_fit(const FeatureMatrix& f, std::size_t k, std::size_t iters,
                    std::uint64_t seed) {
  if (k == 0) throw ConfigError("kmeans: K must be >= 1");
  if (f.frames < k) {
    throw DataError("kmeans: " + std::to_string(f.frames) + " frames for K=" +
                    std::to_string(k));
  }
  Rng rng(seed);
  Codebook cb;
  cb.k = k;
  cb.dim = f.dim;
  cb.centroids.resize(k * f.dim);

  const std::size_t n = f.frames;
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(f.row(pick), f.dim, cb.centroids.begin() + static_cast<std::ptrdiff_t>(c * f.dim));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sqdist(f.row(i), cb.centroid(c), f.dim));
      total += d2[i];
    }
    if (c + 1 == k) break;
    if (!(total > 0.0)) {
      throw DataError("kmeans: only " + std::to_string(c + 1) +
                      " distinct frames for K=" + std::to_string(k));
    }
    double r = rng.uniform(0.0, total);
    pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      pick = i;
      r -= d2[i];
      if (r < 0.0) break;
    }
  }
  return lloyd(f, std::move(cb), iters);
}

Codebook kmeans_refine(const FeatureMatrix& f, const Codebook& init, std::size_t iters) {
  require_dim(f, init);
  return lloyd(f, init, iters);
}

double wcss(const FeatureMatrix& f, const Codebook& cb) {
  require_dim(f, cb);
  double total = 0.0;
  for (std::size_t i = 0; i < f.frames; ++i) total += nearest(f.row(i), cb).second;
  return total;
}

LabelSequence assign_labels(const FeatureMatrix& f, const Codebook& cb) {
  require_dim(f, cb);
  LabelSequence out(f.frames);
  for (std::size_t i = 0; i < f.frames; ++i) {
    out[i] = static_cast<int>(nearest(f.row(i), cb).first);
  }
  return out;
}

LabelSequence align_labels_to_encoder(const LabelSequence& labels,
                                      std::size_t feature_hop, std::size_t encoder_hop,
                                      std::int64_t encoder_frames) {
  if (feature_hop == 0 || encoder_hop == 0) throw ConfigError("align_labels: hop must be > 0");
  if (encoder_frames <= 0) throw DataError("align_labels: encoder frame count must be > 0");
  if (labels.empty()) throw DataError("align_labels: no labels to align");
  const double ratio = static_cast<double>(encoder_hop) / static_cast<double>(feature_hop);
  LabelSequence out(static_cast<std::size_t>(encoder_frames));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto j = static_cast<std::size_t>(std::llround(static_cast<double>(i) * ratio));
    out[i] = labels[std::min(j, labels.size() - 1)];
  }
  return out;
}

void save_codebook(const std::filesystem::path& path, const Codebook& cb) {
  cb.validate();
  Checkpoint ck;
  ck.tensors["codebook.centroids"] = Tensor::from({cb.k, cb.dim}, cb.centroids);
  const auto& fc = cb.feature_config;
  ck.trailer = format_kv({{"kind", "codebook"},
                          {"n_mels", std::to_string(fc.n_mels)},
                          {"frame_len", std::to_string(fc.frame_len)},
                          {"frame_hop", std::to_string(fc.frame_hop)},
                          {"n_fft", std::to_string(fc.n_fft)}});
  save_checkpoint(path, ck);
}

Codebook load_codebook(const std::filesystem::path& path) {
  const auto ck = load_checkpoint(path);
  auto it = ck.tensors.find("codebook.centroids");
  if (it == ck.tensors.end() || it->second.shape().size() != 2) {
    throw DataError(path.string() + ": no codebook.centroids matrix");
  }
  Codebook cb;
  cb.k = it->second.dim(0);
  cb.dim = it->second.dim(1);
  cb.centroids = it->second.to_vector();
  const auto kv = parse_kv(ck.trailer);
  auto& fc = cb.feature_config;
  fc.n_mels = static_cast<std::size_t>(kv_int(kv, "n_mels", static_cast<long long>(fc.n_mels)));
  fc.frame_len = static_cast<std::size_t>(kv_int(kv, "frame_len", static_cast<long long>(fc.frame_len)));
  fc.frame_hop = static_cast<std::size_t>(kv_int(kv, "frame_hop", static_cast<long long>(fc.frame_hop)));
  fc.n_fft = static_cast<std::size_t>(kv_int(kv, "n_fft", static_cast<long long>(fc.n_fft)));
  cb.validate();
  return cb;
}

LabelingResult label_corpus(const SpeakerInventory& inv, const AudioStore& audio,
                            std::size_t k, std::size_t iters, std::uint64_t seed,
                            const FeatureConfig& fcfg) {
  const auto ids = inv.utterance_ids();
  std::vector<FeatureMatrix> feats;
  feats.reserve(ids.size());
  for (const auto& id : ids) feats.push_back(logmel(audio.get(id), fcfg));

  LabelingResult res;
  res.codebook = kmeans_fit(stack_features(feats), k, iters, seed);
  res.codebook.feature_config = fcfg;
  for (std::size_t u = 0; u < ids.size(); ++u) {
    const auto t_enc = encoder_frame_count(audio.get(ids[u]).size());
    if (t_enc == 0 || feats[u].frames == 0) {
      throw DataError("utterance " + ids[u] + " is shorter than one encoder frame");
    }
    res.labels[ids[u]] = align_labels_to_encoder(assign_labels(feats[u], res.codebook),
                                                 fcfg.frame_hop, kEncoderHop,
                                                 static_cast<std::int64_t>(t_enc));
  }
  return res;
}

}  // namespace tspt
