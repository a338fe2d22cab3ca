// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tspt/corpus/features.hpp"
#include "tspt/corpus/wav.hpp"
#include "tspt/model/model.hpp"
#include "tspt/numcore/tensor.hpp"

namespace tspt {

/// Log-mel mean over frames followed by the std over frames (E = 2 n_mels).
std::vector<double> extract_embedding(const Waveform& e, const FeatureConfig& cfg = {});

/// Projection parameters of one adapter. Add uses shift_w/shift_b only:
/// b(emb) = emb shift_w + shift_b. FiLM and cLN also use
/// w(emb) = 1 + emb scale_w + scale_b.
struct AdapterParams {
  AdapterKind kind = AdapterKind::None;
  Tensor scale_w;  // (E, D)
  Tensor scale_b;  // (D)
  Tensor shift_w;  // (E, D)
  Tensor shift_b;  // (D)
};

/// Zero projections: the adapter computes the identity.
AdapterParams make_adapter_params(AdapterKind kind, std::size_t embed_dim,
                                  std::size_t dim, bool requires_grad = true);

/// X + broadcast(b(emb)); emb is (1, E).
Tensor adapt_add(const Tensor& x, const Tensor& emb, const AdapterParams& p);
/// w(emb) * X + b(emb), broadcast over frames.
Tensor adapt_film(const Tensor& x, const Tensor& emb, const AdapterParams& p);
/// [w(emb) * gamma + b(emb)] * (X - mu) / sigma + beta, sigma the per-frame
/// std (sqrt(var + eps)). Throws NumericalError if sigma < 1e-12.
Tensor adapt_cln(const Tensor& x, const Tensor& emb, const Tensor& gamma,
                 const Tensor& beta, const AdapterParams& p, double eps = 0.0);

/// Parameter prefix of the adapter attached to a given host.
std::string adapter_prefix(const AdapterSite& site, const std::string& host);

/// Adapter parameters registered in `state` under `prefix`.
AdapterParams adapter_params(const ModelState& state, AdapterKind kind,
                             const std::string& prefix);

/// Copy of `state` with the adapter registered at identity init. Add/FiLM
/// attach after the CNN; cLN converts both LayerNorms of layer 0.
ModelState insert_adapter(const ModelState& state, AdapterKind kind,
                          const AdapterSite& site);

/// Parameters the adapter adds: Add E D + D, FiLM 2 (E D + D), cLN 4 (E D + D).
std::size_t adapter_parameter_count(AdapterKind kind, std::size_t embed_dim,
                                    std::size_t dim);

/// Binary embedding cache: "TSEM", u32 count, then per entry u32 name
/// length, name, u32 E, E little-endian f64.
void save_embeddings(const std::filesystem::path& path,
                     const std::map<std::string, std::vector<double>>& embeddings);
std::map<std::string, std::vector<double>> load_embeddings(
    const std::filesystem::path& path);

}  // namespace tspt
