// SPDX-License-Identifier: Apache-2.0
#include "tspt/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tspt/adapters/adapters.hpp"
#include "tspt/error.hpp"
#include "tspt/geometry.hpp"
#include "tspt/numcore/checkpoint.hpp"
#include "tspt/numcore/ops.hpp"
#include "tspt/rng.hpp"

namespace tspt {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string layer_name(std::size_t l, const char* leaf) {
  return "layer" + std::to_string(l) + "." + leaf;
}

class Initializer {
 public:
  Initializer(ParamMap& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  void normal(const std::string& name, Shape shape, double stddev) {
    Rng r = rng_.split(fnv1a(name));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = r.normal(0.0, stddev);
    add(name, std::move(shape), std::move(v));
  }
  void constant(const std::string& name, Shape shape, double value) {
    add(name, shape, std::vector<double>(shape_numel(shape), value));
  }

 private:
  void add(const std::string& name, Shape shape, std::vector<double> v) {
    params_[name] = Tensor::from(std::move(shape), std::move(v), true);
  }
  ParamMap& params_;
  Rng rng_;
};

Tensor layer_norm_site(const ModelState& s, std::size_t l, const char* which,
                       const Tensor& x, const Tensor* emb) {
  const auto& g = s.param(layer_name(l, which) + std::string(".g"));
  const auto& b = s.param(layer_name(l, which) + std::string(".b"));
  const auto& cfg = s.config;
  if (cfg.adapter == AdapterKind::CLN && cfg.adapter_site.layer == l) {
    if (!emb) throw ConfigError("cLN adapter requires a speaker embedding");
    const auto p = adapter_params(s, AdapterKind::CLN, adapter_prefix(cfg.adapter_site, which));
    return adapt_cln(x, *emb, g, b, p, cfg.ln_eps);
  }
  return ops::layer_norm(x, g, b, cfg.ln_eps);
}

// Bucket index of every relative distance -(n-1)..(n-1), cached per size.
const std::vector<std::size_t>& bucket_line(const ModelConfig& cfg, std::size_t n) {
  thread_local std::map<std::tuple<std::size_t, std::size_t, std::size_t>,
                        std::vector<std::size_t>>
      cache;
  auto key = std::make_tuple(n, cfg.rel_pos_buckets, cfg.max_rel_distance);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::vector<std::size_t> line(2 * n - 1);
  for (std::size_t k = 0; k < line.size(); ++k) {
    line[k] = relative_bucket(static_cast<std::int64_t>(k) - static_cast<std::int64_t>(n - 1),
                              cfg.rel_pos_buckets, cfg.max_rel_distance);
  }
  return cache.emplace(key, std::move(line)).first->second;
}

Tensor attention(const ModelState& s, std::size_t l, const Tensor& a) {
  const auto& cfg = s.config;
  const std::size_t n = a.dim(0), dh = cfg.head_dim();
  auto proj = [&](const char* w, const char* b) {
    return ops::add_rowvec(ops::matmul(a, s.param(layer_name(l, w))), s.param(layer_name(l, b)));
  };
  const Tensor q = proj("attn.wq", "attn.bq");
  // A key bias only shifts each score row by a constant, so keys have none.
  const Tensor k = ops::matmul(a, s.param(layer_name(l, "attn.wk")));
  const Tensor v = proj("attn.wv", "attn.bv");
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& u = s.param(layer_name(l, "gate.u"));
  const auto& alpha = s.param(layer_name(l, "gate.alpha"));
  const auto& beta = s.param(layer_name(l, "gate.beta"));

  std::vector<Tensor> heads;
  heads.reserve(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const Tensor qh = ops::slice(q, 1, h * dh, dh);
    const Tensor kh = ops::slice(k, 1, h * dh, dh);
    const Tensor vh = ops::slice(v, 1, h * dh, dh);
    const Tensor gate = ops::sigmoid(ops::scale(ops::matmul_nt(qh, ops::slice(u, 0, h, 1)), inv));
    const Tensor coef = ops::add_scalar(ops::mul_scalar(gate, ops::slice(beta, 0, h, 1)),
                                        ops::slice(alpha, 0, h, 1));
    Tensor scores = ops::scale(ops::matmul_nt(qh, kh), inv);
    scores = ops::add(scores, gated_relative_bias(s, h, n, coef));
    heads.push_back(ops::matmul(ops::softmax(scores), vh));
  }
  const Tensor o = heads.size() == 1 ? heads.front() : ops::concat(heads, 1);
  return ops::add_rowvec(ops::matmul(o, s.param(layer_name(l, "attn.wo"))),
                         s.param(layer_name(l, "attn.bo")));
}

Tensor feed_forward(const ModelState& s, std::size_t l, const Tensor& x) {
  const Tensor hidden = ops::gelu(
      ops::add_rowvec(ops::matmul(x, s.param(layer_name(l, "ffn.w1"))), s.param(layer_name(l, "ffn.b1"))));
  return ops::add_rowvec(ops::matmul(hidden, s.param(layer_name(l, "ffn.w2"))),
                         s.param(layer_name(l, "ffn.b2")));
}

std::optional<Tensor> embedding_tensor(const ModelState& s, const std::vector<double>* emb) {
  if (s.config.adapter == AdapterKind::None) return std::nullopt;
  if (!emb) throw ConfigError("model has a " + to_string(s.config.adapter) +
                              " adapter but no speaker embedding was given");
  if (emb->size() != s.config.embed_dim) {
    throw ShapeError("speaker embedding has " + std::to_string(emb->size()) +
                     " dims, adapter expects " + std::to_string(s.config.embed_dim));
  }
  return Tensor::from({1, emb->size()}, *emb);
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (conv_stack.empty()) fail("conv_stack is empty");
  for (const auto& c : conv_stack) {
    if (c.channels == 0 || c.kernel == 0 || c.stride == 0) fail("conv_stack entries must be positive");
  }
  if (conv_stack.back().channels != dim) fail("last conv layer must output dim channels");
  if (total_stride() != kEncoderHop) {
    fail("total CNN stride " + std::to_string(total_stride()) + " != encoder hop " +
         std::to_string(kEncoderHop));
  }
  if (receptive_field() != kEncoderReceptiveField) {
    fail("CNN receptive field " + std::to_string(receptive_field()) + " != " +
         std::to_string(kEncoderReceptiveField));
  }
  if (dim == 0 || n_heads == 0 || dim % n_heads != 0) fail("dim must be divisible by n_heads");
  if (n_layers == 0 || ffn_dim == 0) fail("n_layers and ffn_dim must be positive");
  if (rpe_kernel == 0 || rpe_groups == 0 || dim % rpe_groups != 0) {
    fail("dim must be divisible by rpe_groups");
  }
  if (n_classes == 0) fail("n_classes must be positive");
  if (rel_pos_buckets < 4 || rel_pos_buckets % 2 != 0) fail("rel_pos_buckets must be even and >= 4");
  if (max_rel_distance <= rel_pos_buckets / 8) fail("max_rel_distance too small for the bucket count");
  if (!(ln_eps >= 0.0)) fail("ln_eps must be >= 0");
  using W = AdapterSite::Where;
  switch (adapter) {
    case AdapterKind::None:
      if (adapter_site.where != W::None) fail("adapter site without adapter kind");
      break;
    case AdapterKind::Add:
    case AdapterKind::FiLM:
      if (adapter_site.where != W::PostCnn) fail(to_string(adapter) + " adapters attach after the CNN");
      break;
    case AdapterKind::CLN:
      if (adapter_site.where != W::LayerNorms || adapter_site.layer != 0) {
        fail("cLN converts the LayerNorms of the first Transformer layer only");
      }
      break;
  }
  if (adapter != AdapterKind::None && embed_dim == 0) fail("embed_dim must be positive");
}

std::size_t ModelConfig::receptive_field() const {
  std::size_t rf = 1, jump = 1;
  for (const auto& c : conv_stack) {
    rf += (c.kernel - 1) * jump;
    jump *= c.stride;
  }
  return rf;
}

std::size_t ModelConfig::total_stride() const {
  std::size_t s = 1;
  for (const auto& c : conv_stack) s *= c.stride;
  return s;
}

KeyValues ModelConfig::to_kv() const {
  std::string stack;
  for (const auto& c : conv_stack) {
    if (!stack.empty()) stack += ",";
    stack += std::to_string(c.channels) + ":" + std::to_string(c.kernel) + ":" +
             std::to_string(c.stride);
  }
  return {{"conv_stack", stack},
          {"dim", std::to_string(dim)},
          {"n_layers", std::to_string(n_layers)},
          {"n_heads", std::to_string(n_heads)},
          {"ffn_dim", std::to_string(ffn_dim)},
          {"rpe_kernel", std::to_string(rpe_kernel)},
          {"rpe_groups", std::to_string(rpe_groups)},
          {"n_classes", std::to_string(n_classes)},
          {"rel_pos_buckets", std::to_string(rel_pos_buckets)},
          {"max_rel_distance", std::to_string(max_rel_distance)},
          {"ln_eps", format_double(ln_eps)},
          {"enroll_position", enroll_position == EnrollPosition::Front ? "front" : "back"},
          {"adapter", to_string(adapter)},
          {"adapter_site", to_string(adapter_site)},
          {"embed_dim", std::to_string(embed_dim)},
          {"init_seed", std::to_string(init_seed)}};
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  ModelConfig c;
  if (auto it = kv.find("conv_stack"); it != kv.end()) {
    c.conv_stack.clear();
    std::istringstream is(it->second);
    std::string item;
    while (std::getline(is, item, ',')) {
      ConvLayerSpec l;
      char s1 = 0, s2 = 0;
      std::istringstream ls(item);
      if (!(ls >> l.channels >> s1 >> l.kernel >> s2 >> l.stride) || s1 != ':' || s2 != ':') {
        throw ConfigError("conv_stack: expected channels:kernel:stride, got '" + item + "'");
      }
      c.conv_stack.push_back(l);
    }
  }
  auto sz = [&](const char* key, std::size_t& field) {
    const auto v = kv_int(kv, key, static_cast<long long>(field));
    if (v < 0) throw ConfigError(std::string(key) + " must be >= 0");
    field = static_cast<std::size_t>(v);
  };
  sz("dim", c.dim);
  sz("n_layers", c.n_layers);
  sz("n_heads", c.n_heads);
  sz("ffn_dim", c.ffn_dim);
  sz("rpe_kernel", c.rpe_kernel);
  sz("rpe_groups", c.rpe_groups);
  sz("n_classes", c.n_classes);
  sz("rel_pos_buckets", c.rel_pos_buckets);
  sz("max_rel_distance", c.max_rel_distance);
  sz("embed_dim", c.embed_dim);
  c.ln_eps = kv_double(kv, "ln_eps", c.ln_eps);
  const auto pos = kv_string(kv, "enroll_position", "front");
  if (pos == "front") {
    c.enroll_position = EnrollPosition::Front;
  } else if (pos == "back") {
    c.enroll_position = EnrollPosition::Back;
  } else {
    throw ConfigError("enroll_position must be front or back, got '" + pos + "'");
  }
  c.adapter = parse_adapter_kind(kv_string(kv, "adapter", "none"));
  c.adapter_site = parse_adapter_site(kv_string(kv, "adapter_site", "none"));
  c.init_seed = static_cast<std::uint64_t>(kv_int(kv, "init_seed", 1));
  c.validate();
  return c;
}

ModelConfig tiny_model_config(std::size_t n_classes) {
  ModelConfig c;
  c.conv_stack = {{16, 20, 10}, {16, 15, 8}, {32, 4, 4}};
  c.dim = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_dim = 64;
  c.rpe_kernel = 9;
  c.rpe_groups = 4;
  c.n_classes = n_classes;
  c.rel_pos_buckets = 32;
  c.max_rel_distance = 400;
  return c;
}

const Tensor& ModelState::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw ConfigError("model has no parameter '" + name + "'");
  return it->second;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [k, t] : params) n += t.numel();
  return n;
}

std::vector<std::string> ModelState::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [k, t] : params) {
    if (k.rfind(prefix, 0) == 0) out.push_back(k);
  }
  return out;
}

ModelState init_model(const ModelConfig& config) {
  config.validate();
  ModelState s;
  s.config = config;
  s.config.adapter = AdapterKind::None;
  s.config.adapter_site = {};
  Initializer init(s.params, config.init_seed);
  const std::size_t d = config.dim;

  std::size_t in = 1;
  for (std::size_t i = 0; i < config.conv_stack.size(); ++i) {
    const auto& c = config.conv_stack[i];
    const std::string p = "cnn.conv" + std::to_string(i);
    init.normal(p + ".w", {c.channels, in, c.kernel},
                std::sqrt(2.0 / static_cast<double>(in * c.kernel)));
    init.constant(p + ".b", {c.channels}, 0.0);
    in = c.channels;
  }
  init.constant("cnn.ln.g", {d}, 1.0);
  init.constant("cnn.ln.b", {d}, 0.0);

  const std::size_t rpe_in = d / config.rpe_groups;
  for (const char* stream : {"main", "enroll"}) {
    const std::string p = std::string("rpe.") + stream;
    init.normal(p + ".w", {d, rpe_in, config.rpe_kernel},
                1.0 / std::sqrt(static_cast<double>(rpe_in * config.rpe_kernel)));
    init.constant(p + ".b", {d}, 0.0);
    init.normal(std::string("bias.") + stream, {d}, 0.1);
  }
  init.normal("relpos.table", {config.rel_pos_buckets, config.n_heads}, 0.1);

  const double xavier_dd = std::sqrt(1.0 / static_cast<double>(d));
  const double xavier_df = std::sqrt(2.0 / static_cast<double>(d + config.ffn_dim));
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    for (const char* ln : {"ln1", "ln2"}) {
      init.constant(layer_name(l, ln) + ".g", {d}, 1.0);
      init.constant(layer_name(l, ln) + ".b", {d}, 0.0);
    }
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      init.normal(layer_name(l, w), {d, d}, xavier_dd);
    }
    for (const char* b : {"attn.bq", "attn.bv", "attn.bo"}) {
      init.constant(layer_name(l, b), {d}, 0.0);
    }
    init.normal(layer_name(l, "gate.u"), {config.n_heads, config.head_dim()}, 0.1);
    init.constant(layer_name(l, "gate.alpha"), {config.n_heads}, 1.0);
    init.constant(layer_name(l, "gate.beta"), {config.n_heads}, 0.5);
    init.normal(layer_name(l, "ffn.w1"), {d, config.ffn_dim}, xavier_df);
    init.constant(layer_name(l, "ffn.b1"), {config.ffn_dim}, 0.0);
    init.normal(layer_name(l, "ffn.w2"), {config.ffn_dim, d}, xavier_df);
    init.constant(layer_name(l, "ffn.b2"), {d}, 0.0);
  }
  replace_head(s, config.n_classes, config.init_seed);

  if (config.adapter != AdapterKind::None) {
    return insert_adapter(s, config.adapter, config.adapter_site);
  }
  return s;
}

void replace_head(ModelState& state, std::size_t n_classes, std::uint64_t seed) {
  if (n_classes == 0) throw ConfigError("head needs at least one class");
  ParamMap fresh;
  Initializer init(fresh, seed);
  const std::size_t d = state.config.dim;
  init.normal("head.w", {d, n_classes}, 0.1 / std::sqrt(static_cast<double>(d)));
  init.constant("head.b", {n_classes}, 0.0);
  state.params["head.w"] = fresh["head.w"];
  state.params["head.b"] = fresh["head.b"];
  state.config.n_classes = n_classes;
}

std::size_t relative_bucket(std::int64_t rel, std::size_t num_buckets,
                            std::size_t max_distance) {
  const std::size_t half = num_buckets / 2;
  const std::size_t offset = rel > 0 ? half : 0;
  const auto n = static_cast<std::size_t>(rel < 0 ? -rel : rel);
  const std::size_t exact = std::max<std::size_t>(1, half / 4);
  if (n < exact) return offset + n;
  const double ratio = std::log(static_cast<double>(n) / static_cast<double>(exact)) /
                       std::log(static_cast<double>(max_distance) / static_cast<double>(exact));
  const auto b = exact + static_cast<std::size_t>(ratio * static_cast<double>(half - exact));
  return offset + std::min(b, half - 1);
}

Tensor cnn_encode(const ModelState& state, const Waveform& w) {
  const auto& cfg = state.config;
  if (w.size() < cfg.receptive_field()) {
    throw ShapeError("waveform of " + std::to_string(w.size()) +
                     " samples is shorter than the CNN receptive field (" +
                     std::to_string(cfg.receptive_field()) + ")");
  }
  Tensor x = Tensor::from({w.size(), 1}, w.samples);
  for (std::size_t i = 0; i < cfg.conv_stack.size(); ++i) {
    const std::string p = "cnn.conv" + std::to_string(i);
    ops::Conv1dSpec spec;
    spec.stride = cfg.conv_stack[i].stride;
    x = ops::gelu(ops::conv1d(x, state.param(p + ".w"), state.param(p + ".b"), spec));
  }
  return ops::layer_norm(x, state.param("cnn.ln.g"), state.param("cnn.ln.b"), cfg.ln_eps);
}

Tensor conv_rpe(const ModelState& state, const std::string& stream, const Tensor& x) {
  const auto& cfg = state.config;
  const std::size_t k = cfg.rpe_kernel, t = x.dim(0);
  ops::Conv1dSpec spec;
  spec.pad_left = k / 2;
  spec.pad_right = k / 2;
  spec.groups = cfg.rpe_groups;
  Tensor y = ops::conv1d(x, state.param("rpe." + stream + ".w"),
                         state.param("rpe." + stream + ".b"), spec);
  // Even kernels produce one extra frame.
  if (y.dim(0) != t) y = ops::slice(y, 0, 0, t);
  return ops::add(x, ops::gelu(y));
}

FusedStreams fuse_streams(const ModelState& state, const Tensor& x, const Tensor* x_enroll) {
  const std::size_t d = state.config.dim;
  if (x.shape().size() != 2 || x.dim(1) != d) {
    throw ShapeError("fuse_streams: main stream must be (T, " + std::to_string(d) + "), got " +
                     shape_str(x.shape()));
  }
  FusedStreams f;
  const Tensor main = ops::add_rowvec(conv_rpe(state, "main", x), state.param("bias.main"));
  const std::size_t t = x.dim(0);
  if (!x_enroll) {
    f.z = main;
    f.main_begin = 0;
    f.main_end = t;
    f.boundary = 0;
    return f;
  }
  if (x_enroll->shape().size() != 2 || x_enroll->dim(1) != d) {
    throw ShapeError("fuse_streams: enrollment stream must be (L, " + std::to_string(d) +
                     "), got " + shape_str(x_enroll->shape()));
  }
  const Tensor enroll =
      ops::add_rowvec(conv_rpe(state, "enroll", *x_enroll), state.param("bias.enroll"));
  const std::size_t l = x_enroll->dim(0);
  if (state.config.enroll_position == EnrollPosition::Front) {
    f.z = ops::concat({enroll, main}, 0);
    f.main_begin = l;
    f.main_end = l + t;
    f.boundary = l;
  } else {
    f.z = ops::concat({main, enroll}, 0);
    f.main_begin = 0;
    f.main_end = t;
    f.boundary = t;
  }
  return f;
}

Tensor gated_relative_bias(const ModelState& state, std::size_t head, std::size_t n,
                           const Tensor& coefficients) {
  const auto& cfg = state.config;
  const auto& line = bucket_line(cfg, n);
  std::vector<std::size_t> idx(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      idx[i * n + j] = line[j + n - 1 - i] * cfg.n_heads + head;
    }
  }
  const Tensor table = ops::lookup(state.param("relpos.table"), idx, {n, n});
  return ops::mul_colvec(table, coefficients);
}

Tensor transformer_forward(const ModelState& state, const Tensor& z, const Tensor* embedding,
                           std::optional<std::size_t> stop_after_layer) {
  if (z.shape().size() != 2 || z.dim(1) != state.config.dim) {
    throw ShapeError("transformer_forward: expected (N, " + std::to_string(state.config.dim) +
                     "), got " + shape_str(z.shape()));
  }
  const std::size_t layers = std::min(state.config.n_layers,
                                      stop_after_layer.value_or(state.config.n_layers));
  Tensor h = z;
  for (std::size_t l = 0; l < layers; ++l) {
    h = ops::add(h, attention(state, l, layer_norm_site(state, l, "ln1", h, embedding)));
    h = ops::add(h, feed_forward(state, l, layer_norm_site(state, l, "ln2", h, embedding)));
  }
  return h;
}

Tensor predict_logits(const ModelState& state, const Tensor& h, std::size_t begin,
                      std::size_t end) {
  if (h.shape().size() != 2 || begin > end || end > h.dim(0)) {
    throw ShapeError("predict_logits: rows [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") out of range for " + shape_str(h.shape()));
  }
  if (begin == end) return Tensor::zeros({0, state.config.n_classes});
  return ops::add_rowvec(ops::matmul(ops::slice(h, 0, begin, end - begin), state.param("head.w")),
                         state.param("head.b"));
}

Tensor predict_logits(const ModelState& state, const Tensor& h, std::size_t boundary) {
  if (h.shape().size() != 2) throw ShapeError("predict_logits: H must be rank 2");
  return predict_logits(state, h, boundary, h.dim(0));
}

ForwardResult forward(const ModelState& state, const Waveform& y,
                      const ForwardOptions& options) {
  const auto emb = embedding_tensor(state, options.embedding);
  const Tensor* emb_ptr = emb ? &*emb : nullptr;
  const auto& cfg = state.config;

  Tensor x = cnn_encode(state, y);
  if (cfg.adapter == AdapterKind::Add || cfg.adapter == AdapterKind::FiLM) {
    const auto p = adapter_params(state, cfg.adapter, adapter_prefix(cfg.adapter_site, ""));
    x = cfg.adapter == AdapterKind::Add ? adapt_add(x, *emb, p) : adapt_film(x, *emb, p);
  }
  if (options.mask) x = apply_masks(x, *options.mask);

  ForwardResult r;
  r.main_frames = x.dim(0);
  std::optional<Tensor> xe;
  if (options.enrollment) {
    xe = cnn_encode(state, *options.enrollment);
    r.enroll_frames = xe->dim(0);
  }
  const auto fused = fuse_streams(state, x, xe ? &*xe : nullptr);
  const Tensor h = transformer_forward(state, fused.z, emb_ptr);
  r.logits = predict_logits(state, h, fused.main_begin, fused.main_end);
  return r;
}

FeatureMatrix layer_features(const ModelState& state, const Waveform& y, std::size_t layer) {
  if (layer > state.config.n_layers) {
    throw ConfigError("layer " + std::to_string(layer) + " beyond the model's " +
                      std::to_string(state.config.n_layers) + " layers");
  }
  if (state.config.adapter != AdapterKind::None) {
    throw ConfigError("layer_features needs a model without adapters");
  }
  NoGradGuard guard;
  const auto fused = fuse_streams(state, cnn_encode(state, y), nullptr);
  const Tensor h = transformer_forward(state, fused.z, nullptr, layer);
  FeatureMatrix f;
  f.frames = h.dim(0);
  f.dim = h.dim(1);
  f.frame_hop = kEncoderHop;
  f.frame_len = kEncoderReceptiveField;
  f.values = h.to_vector();
  return f;
}

void save_model(const std::filesystem::path& path, const ModelState& state,
                const KeyValues& extra) {
  Checkpoint ck;
  ck.tensors = state.params;
  KeyValues trailer = state.config.to_kv();
  for (const auto& [k, v] : extra) {
    if (!trailer.emplace(k, v).second) throw ConfigError("checkpoint metadata key clash: " + k);
  }
  ck.trailer = format_kv(trailer);
  save_checkpoint(path, ck);
}

ModelState load_model(const std::filesystem::path& path, KeyValues* extra) {
  auto ck = load_checkpoint(path);
  const auto kv = parse_kv(ck.trailer);
  ModelState s;
  s.config = ModelConfig::from_kv(kv);
  const auto expect = init_model(s.config);
  for (const auto& [name, t] : expect.params) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw DataError(path.string() + ": missing parameter " + name);
    if (it->second.shape() != t.shape()) {
      throw DataError(path.string() + ": parameter " + name + " has shape " +
                      shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
    }
    s.params[name] = Tensor::from(it->second.shape(), it->second.to_vector(), true);
  }
  if (ck.tensors.size() != expect.params.size()) {
    for (const auto& [name, t] : ck.tensors) {
      if (!expect.params.count(name)) throw DataError(path.string() + ": unexpected parameter " + name);
    }
  }
  if (extra) {
    const auto known = s.config.to_kv();
    extra->clear();
    for (const auto& [k, v] : kv) {
      if (!known.count(k)) (*extra)[k] = v;
    }
  }
  return s;
}

std::string to_string(AdapterKind kind) {
  switch (kind) {
    case AdapterKind::None: return "none";
    case AdapterKind::Add: return "add";
    case AdapterKind::FiLM: return "film";
    case AdapterKind::CLN: return "cln";
  }
  return "none";
}

AdapterKind parse_adapter_kind(const std::string& s) {
  if (s == "none") return AdapterKind::None;
  if (s == "add") return AdapterKind::Add;
  if (s == "film") return AdapterKind::FiLM;
  if (s == "cln") return AdapterKind::CLN;
  throw ConfigError("unknown adapter kind '" + s + "' (none|add|film|cln)");
}

std::string to_string(const AdapterSite& site) {
  switch (site.where) {
    case AdapterSite::Where::None: return "none";
    case AdapterSite::Where::PostCnn: return "post_cnn";
    case AdapterSite::Where::LayerNorms: return "layer" + std::to_string(site.layer) + "_ln";
  }
  return "none";
}

AdapterSite parse_adapter_site(const std::string& s) {
  AdapterSite site;
  if (s == "none") return site;
  if (s == "post_cnn") {
    site.where = AdapterSite::Where::PostCnn;
    return site;
  }
  if (s.size() > 8 && s.rfind("layer", 0) == 0 && s.substr(s.size() - 3) == "_ln") {
    const auto digits = s.substr(5, s.size() - 8);
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), ::isdigit)) {
      site.where = AdapterSite::Where::LayerNorms;
      site.layer = std::stoul(digits);
      return site;
    }
  }
  throw ConfigError("unknown adapter site '" + s + "' (none|post_cnn|layer<N>_ln)");
}

}  // namespace tspt
