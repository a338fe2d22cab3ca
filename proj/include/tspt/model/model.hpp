// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tspt/corpus/features.hpp"
#include "tspt/corpus/wav.hpp"
#include "tspt/kv.hpp"
#include "tspt/numcore/tensor.hpp"
#include "tspt/objectives/objectives.hpp"

namespace tspt {

struct ConvLayerSpec {
  std::size_t channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 0;

  bool operator==(const ConvLayerSpec&) const = default;
};

enum class EnrollPosition { Front, Back };

enum class AdapterKind { None, Add, FiLM, CLN };

/// post_cnn for Add/FiLM; layer_norms of `layer` for cLN.
struct AdapterSite {
  enum class Where { None, PostCnn, LayerNorms } where = Where::None;
  std::size_t layer = 0;

  bool operator==(const AdapterSite&) const = default;
};

struct ModelConfig {
  std::vector<ConvLayerSpec> conv_stack{{32, 20, 10}, {32, 15, 8}, {64, 4, 4}};
  std::size_t dim = 64;
  std::size_t n_layers = 3;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t rpe_kernel = 15;
  std::size_t rpe_groups = 4;
  std::size_t n_classes = 16;
  std::size_t rel_pos_buckets = 64;
  std::size_t max_rel_distance = 800;
  double ln_eps = 1e-5;
  EnrollPosition enroll_position = EnrollPosition::Front;
  AdapterKind adapter = AdapterKind::None;
  AdapterSite adapter_site;
  std::size_t embed_dim = 80;
  std::uint64_t init_seed = 1;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
  std::size_t receptive_field() const;
  std::size_t total_stride() const;
  std::size_t head_dim() const { return dim / n_heads; }

  KeyValues to_kv() const;
  static ModelConfig from_kv(const KeyValues& kv);

  bool operator==(const ModelConfig&) const = default;
};

/// Small configuration used by tests and smoke runs.
ModelConfig tiny_model_config(std::size_t n_classes);

using ParamMap = std::map<std::string, Tensor>;

struct ModelState {
  ModelConfig config;
  ParamMap params;

  const Tensor& param(const std::string& name) const;
  bool has(const std::string& name) const { return params.count(name) != 0; }
  std::size_t parameter_count() const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;
};

/// Fresh parameters drawn from Rng(config.init_seed).
ModelState init_model(const ModelConfig& config);

/// Bucket of the relative distance j - i (sign-aware, exact below 8,
/// log-spaced out to max_distance).
std::size_t relative_bucket(std::int64_t rel, std::size_t num_buckets,
                            std::size_t max_distance);

/// Shared CNN encoder followed by a feature LayerNorm: (T, D).
Tensor cnn_encode(const ModelState& state, const Waveform& w);

struct FusedStreams {
  Tensor z;
  std::size_t main_begin = 0;  // main-stream rows [main_begin, main_end)
  std::size_t main_end = 0;
  std::size_t boundary = 0;    // first row of the second stream
};

/// X + GELU(grouped conv of X) with "same" padding, per stream.
Tensor conv_rpe(const ModelState& state, const std::string& stream, const Tensor& x);

/// rPE and stream bias per stream, then temporal concatenation. A null
/// enrollment gives the single-stream layout.
FusedStreams fuse_streams(const ModelState& state, const Tensor& x,
                          const Tensor* x_enroll);

/// Relative-position bias of one head for an n-frame sequence given the
/// per-row gate coefficients c_i = alpha + g_i beta; (n, n).
Tensor gated_relative_bias(const ModelState& state, std::size_t head, std::size_t n,
                           const Tensor& coefficients);

/// Pre-norm Transformer layers. `embedding` (1, E) feeds cLN adapters.
Tensor transformer_forward(const ModelState& state, const Tensor& z,
                           const Tensor* embedding = nullptr,
                           std::optional<std::size_t> stop_after_layer = std::nullopt);

/// head(H[begin:end]).
Tensor predict_logits(const ModelState& state, const Tensor& h, std::size_t begin,
                      std::size_t end);
/// head(H[boundary:]).
Tensor predict_logits(const ModelState& state, const Tensor& h, std::size_t boundary);

struct ForwardOptions {
  const Waveform* enrollment = nullptr;  // null: "w/o e" single-stream mode
  const MaskSpec* mask = nullptr;
  const std::vector<double>* embedding = nullptr;  // required with adapters
};

struct ForwardResult {
  Tensor logits;  // (T, n_classes) over main-stream frames
  std::size_t main_frames = 0;
  std::size_t enroll_frames = 0;
};

ForwardResult forward(const ModelState& state, const Waveform& y,
                      const ForwardOptions& options = {});

/// Main-stream hidden states after `layer` Transformer layers (0 = input of
/// the first layer), single-stream. For re-labelling from a trained model.
FeatureMatrix layer_features(const ModelState& state, const Waveform& y,
                             std::size_t layer);

/// Replaces the prediction head with a freshly initialized one of
/// `n_classes` outputs.
void replace_head(ModelState& state, std::size_t n_classes, std::uint64_t seed);

/// Parameters and config trailer; `extra` lands in the trailer too.
void save_model(const std::filesystem::path& path, const ModelState& state,
                const KeyValues& extra = {});
ModelState load_model(const std::filesystem::path& path, KeyValues* extra = nullptr);

std::string to_string(AdapterKind kind);
AdapterKind parse_adapter_kind(const std::string& s);
std::string to_string(const AdapterSite& site);
AdapterSite parse_adapter_site(const std::string& s);

}  // namespace tspt
