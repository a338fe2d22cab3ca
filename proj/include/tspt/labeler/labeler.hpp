// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "tspt/corpus/features.hpp"
#include "tspt/corpus/inventory.hpp"

namespace tspt {

inline constexpr std::size_t kDefaultClusters = 16;

struct Codebook {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // k x dim, row-major
  FeatureConfig feature_config;
  std::vector<double> wcss_history;  // per Lloyd iteration; not persisted

  const double* centroid(std::size_t c) const { return centroids.data() + c * dim; }
  /// K >= 1, finite, pairwise distinct. Throws DataError.
  void validate() const;
};

/// Rows of several feature matrices stacked into one (n x dim) matrix.
FeatureMatrix stack_features(const std::vector<FeatureMatrix>& parts);

/// k-means++ seeding, then Lloyd iterations until assignments stop changing
/// or `iters` is reached. Throws DataError when fewer (distinct) frames
/// than K are available.
Codebook kmeans_fit(const FeatureMatrix& features, std::size_t k, std::size_t iters,
                    std::uint64_t seed);

/// Lloyd iterations starting from an existing codebook.
Codebook kmeans_refine(const FeatureMatrix& features, const Codebook& init,
                       std::size_t iters);

double wcss(const FeatureMatrix& features, const Codebook& cb);

/// Nearest centroid per frame, ties to the lowest index.
LabelSequence assign_labels(const FeatureMatrix& features, const Codebook& cb);

/// Nearest-center resampling: out[i] = labels[min(round(i enc/feat), n-1)].
LabelSequence align_labels_to_encoder(const LabelSequence& labels,
                                      std::size_t feature_hop, std::size_t encoder_hop,
                                      std::int64_t encoder_frames);

void save_codebook(const std::filesystem::path& path, const Codebook& cb);
Codebook load_codebook(const std::filesystem::path& path);

struct LabelingResult {
  Codebook codebook;
  std::map<UtteranceId, LabelSequence> labels;  // encoder frame rate
};

/// Log-mel features of every utterance, one fit, encoder-rate labels.
LabelingResult label_corpus(const SpeakerInventory& inv, const AudioStore& audio,
                            std::size_t k, std::size_t iters, std::uint64_t seed,
                            const FeatureConfig& features = {});

}  // namespace tspt
