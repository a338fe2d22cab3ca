// SPDX-License-Identifier: Apache-2.0
#include "tspt/adapters/adapters.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "tspt/error.hpp"
#include "tspt/numcore/ops.hpp"

namespace tspt {

namespace {

void require_kind(const char* op, const AdapterParams& p, AdapterKind want) {
  if (p.kind != want) {
    throw ConfigError(std::string(op) + ": adapter kind is " + to_string(p.kind) + ", expected " +
                      to_string(want));
  }
}

// emb (1, E) x W (E, D) + b -> (D).
Tensor project(const Tensor& emb, const Tensor& w, const Tensor& b) {
  if (emb.shape().size() != 2 || emb.dim(0) != 1 || emb.dim(1) != w.dim(0)) {
    throw ShapeError("adapter: embedding must be (1, " + std::to_string(w.dim(0)) + "), got " +
                     shape_str(emb.shape()));
  }
  return ops::add(ops::reshape(ops::matmul(emb, w), {w.dim(1)}), b);
}

Tensor scale_of(const Tensor& emb, const AdapterParams& p) {
  return ops::add_scalar(project(emb, p.scale_w, p.scale_b), Tensor::scalar(1.0));
}

void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::istream& is, const std::string& where) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError(where + ": truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

std::vector<double> extract_embedding(const Waveform& e, const FeatureConfig& cfg) {
  const auto f = logmel(e, cfg);
  if (f.frames == 0) {
    throw DataError("enrollment of " + std::to_string(e.size()) +
                    " samples is shorter than one feature frame");
  }
  // Moments of x - x[0] so that constant bands come out exact.
  std::vector<double> out(2 * f.dim, 0.0);
  const double n = static_cast<double>(f.frames);
  for (std::size_t d = 0; d < f.dim; ++d) {
    const double x0 = f.at(0, d);
    double s = 0.0;
    for (std::size_t t = 0; t < f.frames; ++t) s += f.at(t, d) - x0;
    const double m = s / n;
    double v = 0.0;
    for (std::size_t t = 0; t < f.frames; ++t) {
      const double x = f.at(t, d) - x0 - m;
      v += x * x;
    }
    out[d] = x0 + m;
    out[f.dim + d] = std::sqrt(v / n);
  }
  return out;
}

AdapterParams make_adapter_params(AdapterKind kind, std::size_t embed_dim, std::size_t dim,
                                  bool requires_grad) {
  if (kind == AdapterKind::None) throw ConfigError("make_adapter_params: kind is none");
  AdapterParams p;
  p.kind = kind;
  p.shift_w = Tensor::zeros({embed_dim, dim}, requires_grad);
  p.shift_b = Tensor::zeros({dim}, requires_grad);
  if (kind != AdapterKind::Add) {
    p.scale_w = Tensor::zeros({embed_dim, dim}, requires_grad);
    p.scale_b = Tensor::zeros({dim}, requires_grad);
  }
  return p;
}

Tensor adapt_add(const Tensor& x, const Tensor& emb, const AdapterParams& p) {
  require_kind("adapt_add", p, AdapterKind::Add);
  return ops::add_rowvec(x, project(emb, p.shift_w, p.shift_b));
}

Tensor adapt_film(const Tensor& x, const Tensor& emb, const AdapterParams& p) {
  require_kind("adapt_film", p, AdapterKind::FiLM);
  return ops::add_rowvec(ops::mul_rowvec(x, scale_of(emb, p)), project(emb, p.shift_w, p.shift_b));
}

Tensor adapt_cln(const Tensor& x, const Tensor& emb, const Tensor& gamma, const Tensor& beta,
                 const AdapterParams& p, double eps) {
  require_kind("adapt_cln", p, AdapterKind::CLN);
  {
    NoGradGuard guard;
    const auto sigma = ops::row_std(x, eps);
    for (std::size_t r = 0; r < sigma.numel(); ++r) {
      if (sigma.data()[r] < 1e-12) {
        throw NumericalError("adapt_cln: frame " + std::to_string(r) +
                             " has zero variance (sigma < 1e-12)");
      }
    }
  }
  const Tensor g = ops::add(ops::mul(scale_of(emb, p), gamma), project(emb, p.shift_w, p.shift_b));
  return ops::add_rowvec(ops::mul_rowvec(ops::normalize_rows(x, eps), g), beta);
}

std::string adapter_prefix(const AdapterSite& site, const std::string& host) {
  switch (site.where) {
    case AdapterSite::Where::PostCnn:
      return "adapter.post_cnn.";
    case AdapterSite::Where::LayerNorms:
      return "adapter.layer" + std::to_string(site.layer) + "." + host + ".";
    case AdapterSite::Where::None:
      break;
  }
  throw ConfigError("adapter_prefix: no adapter site");
}

AdapterParams adapter_params(const ModelState& state, AdapterKind kind,
                             const std::string& prefix) {
  AdapterParams p;
  p.kind = kind;
  p.shift_w = state.param(prefix + "shift_w");
  p.shift_b = state.param(prefix + "shift_b");
  if (kind != AdapterKind::Add) {
    p.scale_w = state.param(prefix + "scale_w");
    p.scale_b = state.param(prefix + "scale_b");
  }
  return p;
}

ModelState insert_adapter(const ModelState& state, AdapterKind kind, const AdapterSite& site) {
  if (state.config.adapter != AdapterKind::None) {
    throw ConfigError("model already has a " + to_string(state.config.adapter) + " adapter");
  }
  ModelState out;
  out.config = state.config;
  out.config.adapter = kind;
  out.config.adapter_site = site;
  out.config.validate();
  if (kind == AdapterKind::None) throw ConfigError("insert_adapter: kind is none");
  for (const auto& [name, t] : state.params) {
    out.params[name] = Tensor::from(t.shape(), t.to_vector(), t.requires_grad());
  }
  auto add = [&](const std::string& prefix) {
    const auto p = make_adapter_params(kind, out.config.embed_dim, out.config.dim);
    out.params[prefix + "shift_w"] = p.shift_w;
    out.params[prefix + "shift_b"] = p.shift_b;
    if (kind != AdapterKind::Add) {
      out.params[prefix + "scale_w"] = p.scale_w;
      out.params[prefix + "scale_b"] = p.scale_b;
    }
  };
  if (kind == AdapterKind::CLN) {
    add(adapter_prefix(site, "ln1"));
    add(adapter_prefix(site, "ln2"));
  } else {
    add(adapter_prefix(site, ""));
  }
  return out;
}

std::size_t adapter_parameter_count(AdapterKind kind, std::size_t embed_dim, std::size_t dim) {
  const std::size_t one = embed_dim * dim + dim;
  switch (kind) {
    case AdapterKind::None: return 0;
    case AdapterKind::Add: return one;
    case AdapterKind::FiLM: return 2 * one;
    case AdapterKind::CLN: return 4 * one;
  }
  return 0;
}

void save_embeddings(const std::filesystem::path& path,
                     const std::map<std::string, std::vector<double>>& embeddings) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os.write("TSEM", 4);
  put_u32(os, static_cast<std::uint32_t>(embeddings.size()));
  for (const auto& [name, v] : embeddings) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(v.size()));
    for (double x : v) {
      const auto bits = std::bit_cast<std::uint64_t>(x);
      for (int i = 0; i < 8; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  }
  if (!os) throw DataError("write failed: " + path.string());
}

std::map<std::string, std::vector<double>> load_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  const std::string where = path.string();
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "TSEM") {
    throw DataError(where + ": not an embedding file");
  }
  std::map<std::string, std::vector<double>> out;
  const auto count = get_u32(is, where);
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name(get_u32(is, where), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) {
      throw DataError(where + ": truncated");
    }
    std::vector<double> v(get_u32(is, where));
    for (auto& x : v) {
      unsigned char b[8];
      if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError(where + ": truncated");
      std::uint64_t bits = 0;
      for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
      x = std::bit_cast<double>(bits);
    }
    out[name] = std::move(v);
  }
  return out;
}

}  // namespace tspt
