// SPDX-License-Identifier: Apache-2.0
#include "tspt/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "tspt/adapters/adapters.hpp"
#include "tspt/error.hpp"
#include "tspt/geometry.hpp"
#include "tspt/mixer/mixer.hpp"
#include "tspt/numcore/ops.hpp"
#include "tspt/objectives/objectives.hpp"

namespace tspt {

namespace {

const std::set<std::string> kTrainKeys{
    "mode",          "steps",          "peak_lr",         "warmup_steps",
    "batch_seconds", "batch_size",     "freeze_cnn",      "freeze_backbone_steps",
    "seed",          "adapter",        "adapter_site",    "enrollment_enabled",
    "enroll_max_samples", "mask_start_rate", "mask_span", "adam_beta1",
    "adam_beta2",    "adam_eps",       "weight_decay",    "checkpoint_every",
    "assert_frozen"};

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

std::set<std::string> all_names(const ModelState& s) {
  std::set<std::string> out;
  for (const auto& [n, t] : s.params) out.insert(n);
  return out;
}

void zero_grads(ModelState& s) {
  for (auto& [n, t] : s.params) t.zero_grad();
}

ModelState deep_copy(const ModelState& s) {
  ModelState out;
  out.config = s.config;
  for (const auto& [n, t] : s.params) out.params[n] = Tensor::from(t.shape(), t.to_vector(), true);
  return out;
}

std::map<std::string, std::vector<double>> snapshot(const ModelState& s,
                                                    const std::set<std::string>& trainable) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [n, t] : s.params) {
    if (!trainable.count(n)) out[n] = t.to_vector();
  }
  return out;
}

void check_frozen(const ModelState& s, const std::map<std::string, std::vector<double>>& before,
                  std::size_t step) {
  for (const auto& [n, v] : before) {
    const auto& now = s.param(n).data();
    if (!std::equal(v.begin(), v.end(), now.begin())) {
      throw NumericalError("frozen parameter " + n + " changed at step " + std::to_string(step));
    }
  }
}

class MetricsSink {
 public:
  explicit MetricsSink(const RunOutput& out) {
    if (!out.dir) return;
    std::filesystem::create_directories(*out.dir);
    os_.open(*out.dir / "metrics.jsonl", std::ios::trunc);
    if (!os_) throw DataError("cannot write " + (*out.dir / "metrics.jsonl").string());
  }
  void write(const MetricsRecord& r) {
    if (os_.is_open()) os_ << r.to_json() << '\n' << std::flush;
  }

 private:
  std::ofstream os_;
};

void require_finite_loss(double loss, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw NumericalError("training diverged at step " + std::to_string(step) + ": loss = " +
                         std::to_string(loss));
  }
}

std::vector<int> to_int(const std::vector<std::size_t>& ids) {
  return {ids.begin(), ids.end()};
}

std::string join_tokens(const Vocabulary& v) {
  std::string s;
  for (const auto& t : v.tokens()) s += (s.empty() ? "" : " ") + t;
  return s;
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Pretrain: return "pretrain";
    case TrainMode::Finetune: return "finetune";
    case TrainMode::FinetuneAdapted: return "finetune_adapted";
  }
  return "pretrain";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "pretrain") return TrainMode::Pretrain;
  if (s == "finetune") return TrainMode::Finetune;
  if (s == "finetune_adapted") return TrainMode::FinetuneAdapted;
  throw ConfigError("unknown mode '" + s + "' (pretrain|finetune|finetune_adapted)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (steps == 0) fail("steps must be >= 1");
  if (warmup_steps > steps) fail("warmup_steps must not exceed steps");
  if (!(peak_lr > 0.0)) fail("peak_lr must be > 0");
  if (batch_size == 0 && !(batch_seconds > 0.0)) fail("batch_seconds must be > 0");
  if (enroll_max_samples == 0) fail("enroll_max_samples must be > 0");
  if (!(mask_start_rate > 0.0 && mask_start_rate <= 1.0)) fail("mask_start_rate must be in (0, 1]");
  if (mask_span == 0) fail("mask_span must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (mode == TrainMode::FinetuneAdapted && adapter == AdapterKind::None) {
    fail("finetune_adapted needs an adapter kind");
  }
  if (mode != TrainMode::FinetuneAdapted && adapter != AdapterKind::None) {
    fail("adapters are only used in finetune_adapted mode");
  }
  if (mode == TrainMode::Pretrain && freeze_backbone_steps > 0) {
    fail("freeze_backbone_steps applies to fine-tuning only");
  }
  model.validate();
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv = model.to_kv();
  kv.erase("adapter");
  kv.erase("adapter_site");
  kv.insert({{"mode", to_string(mode)},
             {"steps", std::to_string(steps)},
             {"peak_lr", format_double(peak_lr)},
             {"warmup_steps", std::to_string(warmup_steps)},
             {"batch_seconds", format_double(batch_seconds)},
             {"batch_size", std::to_string(batch_size)},
             {"freeze_cnn", freeze_cnn ? "true" : "false"},
             {"freeze_backbone_steps", std::to_string(freeze_backbone_steps)},
             {"seed", std::to_string(seed)},
             {"adapter", tspt::to_string(adapter)},
             {"adapter_site", tspt::to_string(adapter_site)},
             {"enrollment_enabled", enrollment_enabled ? "true" : "false"},
             {"enroll_max_samples", std::to_string(enroll_max_samples)},
             {"mask_start_rate", format_double(mask_start_rate)},
             {"mask_span", std::to_string(mask_span)},
             {"adam_beta1", format_double(adam_beta1)},
             {"adam_beta2", format_double(adam_beta2)},
             {"adam_eps", format_double(adam_eps)},
             {"weight_decay", format_double(weight_decay)},
             {"checkpoint_every", std::to_string(checkpoint_every)},
             {"assert_frozen", assert_frozen ? "true" : "false"}});
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  const auto model_keys = ModelConfig{}.to_kv();
  KeyValues model_kv;
  for (const auto& [k, v] : kv) {
    if (kTrainKeys.count(k)) continue;
    if (!model_keys.count(k)) throw ConfigError("unknown config key '" + k + "'");
    model_kv[k] = v;
  }
  TrainConfig c;
  c.model = ModelConfig::from_kv(model_kv);
  auto count = [&](const char* key, std::size_t fallback) {
    const auto v = kv_int(kv, key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be >= 0");
    return static_cast<std::size_t>(v);
  };
  c.mode = parse_train_mode(kv_string(kv, "mode", to_string(c.mode)));
  c.steps = count("steps", c.steps);
  c.peak_lr = kv_double(kv, "peak_lr", c.peak_lr);
  c.warmup_steps = count("warmup_steps", c.warmup_steps);
  c.batch_seconds = kv_double(kv, "batch_seconds", c.batch_seconds);
  c.batch_size = count("batch_size", c.batch_size);
  c.freeze_cnn = kv_bool(kv, "freeze_cnn", c.freeze_cnn);
  c.freeze_backbone_steps = count("freeze_backbone_steps", c.freeze_backbone_steps);
  c.seed = count("seed", c.seed);
  c.adapter = parse_adapter_kind(kv_string(kv, "adapter", "none"));
  c.adapter_site = parse_adapter_site(kv_string(kv, "adapter_site", "none"));
  c.enrollment_enabled = kv_bool(kv, "enrollment_enabled", c.enrollment_enabled);
  c.enroll_max_samples = count("enroll_max_samples", c.enroll_max_samples);
  c.mask_start_rate = kv_double(kv, "mask_start_rate", c.mask_start_rate);
  c.mask_span = count("mask_span", c.mask_span);
  c.adam_beta1 = kv_double(kv, "adam_beta1", c.adam_beta1);
  c.adam_beta2 = kv_double(kv, "adam_beta2", c.adam_beta2);
  c.adam_eps = kv_double(kv, "adam_eps", c.adam_eps);
  c.weight_decay = kv_double(kv, "weight_decay", c.weight_decay);
  c.checkpoint_every = count("checkpoint_every", c.checkpoint_every);
  c.assert_frozen = kv_bool(kv, "assert_frozen", c.assert_frozen);
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  try {
    return from_kv(load_kv(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps) {
    return cfg.peak_lr * (static_cast<double>(step) / static_cast<double>(cfg.warmup_steps));
  }
  if (step >= cfg.steps) return 0.0;
  return cfg.peak_lr * (static_cast<double>(cfg.steps - step) /
                        static_cast<double>(cfg.steps - cfg.warmup_steps));
}

std::string MetricsRecord::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["loss"] = loss;
  if (masked_accuracy) j["masked_accuracy"] = *masked_accuracy;
  if (train_wer) j["train_wer"] = *train_wer;
  j["lr"] = lr;
  j["wall_ms"] = wall_ms;
  return j.dump();
}

void Adam::step(ParamMap& params, const std::set<std::string>& trainable, double lr) {
  for (const auto& name : trainable) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("optimizer: unknown parameter " + name);
    Tensor& p = it->second;
    auto& slot = slots_[name];
    const std::size_t n = p.numel();
    if (slot.m.empty()) {
      slot.m.assign(n, 0.0);
      slot.v.assign(n, 0.0);
    }
    ++slot.t;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(slot.t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(slot.t));
    const auto& g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * gi;
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * gi * gi;
      const double mhat = slot.m[i] / c1, vhat = slot.v[i] / c2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]);
    }
  }
}

std::size_t derive_batch_size(const TrainConfig& cfg, double mean_samples, int sample_rate) {
  if (cfg.batch_size > 0) return cfg.batch_size;
  if (!(mean_samples > 0.0)) throw DataError("cannot derive a batch size from empty data");
  const double n = cfg.batch_seconds * static_cast<double>(sample_rate) / mean_samples;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n)));
}

namespace {

void validate_pretrain_inputs(const SpeakerInventory& inv, const TrainConfig& cfg) {
  if (inv.speaker_count() < 2) {
    throw DataError("pre-training needs at least 2 speakers, inventory has " +
                    std::to_string(inv.speaker_count()));
  }
  for (const auto& [id, spk] : inv.speaker_of) {
    auto it = inv.labels.find(id);
    if (it == inv.labels.end()) throw DataError("unlabeled utterance encountered: " + id);
    const auto want = encoder_frame_count(inv.num_samples.at(id));
    if (it->second.size() != want) {
      throw DataError("utterance " + id + " has " + std::to_string(it->second.size()) +
                      " labels, encoder produces " + std::to_string(want) + " frames");
    }
    for (int l : it->second) {
      if (l < 0 || static_cast<std::size_t>(l) >= cfg.model.n_classes) {
        throw DataError("utterance " + id + ": label " + std::to_string(l) + " outside [0, " +
                        std::to_string(cfg.model.n_classes) + ")");
      }
    }
  }
}

struct PretrainStepStats {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t masked = 0;
};

// Forward/backward over one simulated batch; gradients accumulate in state.
PretrainStepStats pretrain_batch(const ModelState& state, const std::vector<TrainSample>& batch,
                                 const Rng& batch_rng, const TrainConfig& cfg, bool backward) {
  PretrainStepStats st;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& s = batch[j];
    Rng aux = batch_rng.split(j).split(1);
    const Waveform e = truncate_enrollment(s.enrollment, cfg.enroll_max_samples, aux);
    const auto t = static_cast<std::int64_t>(encoder_frame_count(s.mixed.size()));
    const auto mask = sample_masks(t, aux, cfg.mask_start_rate, cfg.mask_span);
    const auto fwd = forward(state, s.mixed,
                             {.enrollment = cfg.enrollment_enabled ? &e : nullptr, .mask = &mask});
    Tensor loss = ops::scale(masked_ce_loss(fwd.logits, s.labels, mask), inv_b);
    st.loss += loss.item();
    st.correct += static_cast<std::size_t>(
        std::llround(masked_accuracy(fwd.logits, s.labels, mask) * mask.masked.size()));
    st.masked += mask.masked.size();
    if (backward) loss.backward();
  }
  return st;
}

}  // namespace

TrainResult pretrain(const SpeakerInventory& inv, const AudioStore& audio, const TrainConfig& cfg,
                     const RunOutput& out, const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.mode != TrainMode::Pretrain) throw ConfigError("pretrain: config mode is " + to_string(cfg.mode));
  validate_pretrain_inputs(inv, cfg);

  TrainResult res;
  res.state = init_model(cfg.model);
  auto& state = res.state;
  double mean = 0.0;
  for (const auto& [id, n] : inv.num_samples) mean += static_cast<double>(n);
  mean /= static_cast<double>(inv.num_samples.size());
  const std::size_t bs = derive_batch_size(cfg, mean, kDefaultSampleRate);
  const std::size_t per_epoch =
      std::max<std::size_t>(1, (inv.utterance_count() + bs - 1) / bs);

  std::set<std::string> trainable = all_names(state);
  if (cfg.freeze_cnn) {
    for (const auto& n : state.names_with_prefix("cnn.")) trainable.erase(n);
  }
  Adam adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
  MetricsSink sink(out);
  const Rng base(cfg.seed);
  const KeyValues meta{{"kind", "pretrained"}, {"mode", "pretrain"}, {"seed", std::to_string(cfg.seed)}};

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t epoch = (step - 1) / per_epoch, b = (step - 1) % per_epoch;
    const Rng batch_rng = base.split({epoch, b});
    const auto batch = sample_batch(inv, audio, bs, batch_rng);
    zero_grads(state);
    PretrainStepStats st;
    try {
      st = pretrain_batch(state, batch, batch_rng, cfg, true);
    } catch (const NumericalError& e) {
      throw NumericalError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    require_finite_loss(st.loss, step);

    const double lr = lr_at(step, cfg);
    std::map<std::string, std::vector<double>> frozen;
    if (cfg.assert_frozen) frozen = snapshot(state, trainable);
    adam.step(state.params, trainable, lr);
    if (cfg.assert_frozen) check_frozen(state, frozen, step);

    MetricsRecord rec;
    rec.step = step;
    rec.loss = st.loss;
    rec.masked_accuracy = static_cast<double>(st.correct) / static_cast<double>(st.masked);
    rec.lr = lr;
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    sink.write(rec);
    res.metrics.push_back(rec);
    if (hooks.on_metrics) hooks.on_metrics(rec);
    if (hooks.on_step) hooks.on_step(step, state);

    if (out.dir && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps) {
      auto m = meta;
      m["step"] = std::to_string(step);
      save_model(*out.dir / ("step_" + std::to_string(step) + ".ckpt"), state, m);
    }
  }
  zero_grads(state);
  if (out.dir) {
    auto m = meta;
    m["step"] = std::to_string(cfg.steps);
    save_model(*out.dir / "final.ckpt", state, m);
  }
  return res;
}

double evaluate_masked_accuracy(const ModelState& state, const SpeakerInventory& inv,
                                const AudioStore& audio, const TrainConfig& cfg,
                                std::size_t samples, std::uint64_t seed) {
  NoGradGuard guard;
  const Rng rng(seed);
  const auto batch = sample_batch(inv, audio, samples, rng);
  const auto st = pretrain_batch(state, batch, rng, cfg, false);
  return static_cast<double>(st.correct) / static_cast<double>(st.masked);
}

std::vector<PairedItem> load_paired_data(const std::filesystem::path& manifest,
                                         const std::filesystem::path& enroll_map,
                                         const std::filesystem::path& enroll_manifest,
                                         const std::optional<std::filesystem::path>& transcripts,
                                         const Vocabulary& vocab) {
  const auto inv = build_inventory(manifest);
  const auto audio = AudioStore::load(inv);
  const auto emap = load_pairs(enroll_map);
  const auto einv = build_inventory(enroll_manifest);
  std::map<UtteranceId, std::string> text;
  if (transcripts) text = load_pairs(*transcripts);

  std::vector<PairedItem> items;
  for (const auto& id : inv.utterance_ids()) {
    auto e = emap.find(id);
    if (e == emap.end()) throw DataError("enrollment map has no entry for utterance " + id);
    auto p = einv.paths.find(e->second);
    if (p == einv.paths.end()) {
      throw DataError("enrollment utterance " + e->second + " (for " + id + ") is not in " +
                      enroll_manifest.string());
    }
    PairedItem it;
    it.id = id;
    it.mixture = audio.get(id);
    it.enrollment = load_wav(p->second);
    if (transcripts) {
      auto t = text.find(id);
      if (t == text.end()) throw DataError("no transcript for utterance " + id);
      it.transcript = t->second;
      try {
        it.target = to_int(vocab.encode(t->second));
      } catch (const DataError& err) {
        throw DataError("transcript of " + id + " does not match the vocabulary: " + err.what());
      }
    }
    items.push_back(std::move(it));
  }
  return items;
}

std::set<std::string> finetune_trainable(const ModelState& state, const TrainConfig& cfg,
                                         std::size_t step) {
  std::set<std::string> out;
  const bool backbone_frozen = step <= cfg.freeze_backbone_steps;
  for (const auto& [n, t] : state.params) {
    if (starts_with(n, "cnn.")) continue;
    if (backbone_frozen && !starts_with(n, "head.") && !starts_with(n, "adapter.")) continue;
    out.insert(n);
  }
  return out;
}

TrainResult finetune(const std::vector<PairedItem>& data, const ModelState& pretrained,
                     const Vocabulary& vocab, const TrainConfig& cfg, const RunOutput& out,
                     const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.mode == TrainMode::Pretrain) throw ConfigError("finetune: config mode is pretrain");
  if (data.empty()) throw DataError("finetune: no paired data");
  if (pretrained.config.adapter != AdapterKind::None) {
    throw ConfigError("finetune: starting checkpoint already has an adapter");
  }
  for (const auto& it : data) {
    if (it.transcript.empty() && it.target.empty()) {
      throw DataError("finetune: utterance " + it.id + " has no transcript");
    }
    for (int tok : it.target) {
      if (tok <= 0 || static_cast<std::size_t>(tok) >= vocab.size()) {
        throw DataError("finetune: token outside the vocabulary in " + it.id);
      }
    }
  }

  TrainResult res;
  res.state = deep_copy(pretrained);
  replace_head(res.state, vocab.size(), cfg.seed);
  if (cfg.adapter != AdapterKind::None) {
    res.state = insert_adapter(res.state, cfg.adapter, cfg.adapter_site);
  }
  auto& state = res.state;

  std::map<UtteranceId, std::vector<double>> embeddings;
  if (cfg.adapter != AdapterKind::None) {
    for (const auto& it : data) embeddings[it.id] = extract_embedding(it.enrollment);
  }
  double mean = 0.0;
  for (const auto& it : data) mean += static_cast<double>(it.mixture.size());
  mean /= static_cast<double>(data.size());
  const std::size_t bs = std::min(derive_batch_size(cfg, mean, kDefaultSampleRate), data.size());

  Adam adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
  MetricsSink sink(out);
  const Rng base(cfg.seed);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const Rng step_rng = base.split(step);
    Rng pick = step_rng.split(0);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < bs; ++i) {
      const auto j = static_cast<std::size_t>(
          pick.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(data.size()) - 1));
      std::swap(order[i], order[j]);
    }

    zero_grads(state);
    const auto trainable = finetune_trainable(state, cfg, step);
    double loss_sum = 0.0;
    std::size_t errors = 0, words = 0, used = 0;
    try {
      for (std::size_t j = 0; j < bs; ++j) {
        const auto& it = data[order[j]];
        Rng aux = step_rng.split(j + 1);
        const Waveform e = truncate_enrollment(it.enrollment, cfg.enroll_max_samples, aux);
        const auto fwd = forward(state, it.mixture,
                                 {.enrollment = cfg.enrollment_enabled ? &e : nullptr,
                                  .embedding = embeddings.empty() ? nullptr : &embeddings.at(it.id)});
        const Tensor lp = ops::log_softmax(fwd.logits);
        const Tensor nll = ctc_loss(lp, it.target);
        const auto hyp = ctc_decode(lp);
        const auto ref_words = split_words(it.transcript);
        errors += edit_distance(
            split_words(vocab.decode({hyp.begin(), hyp.end()})), ref_words);
        words += ref_words.size();
        if (std::isinf(nll.item())) {
          ++res.skipped_samples;
          continue;
        }
        Tensor loss = ops::scale(nll, 1.0 / static_cast<double>(bs));
        loss_sum += loss.item();
        ++used;
        loss.backward();
      }
    } catch (const NumericalError& e) {
      throw NumericalError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (used == 0) {
      throw DataError("finetune: no transcript in the batch at step " + std::to_string(step) +
                      " fits its mixture length");
    }
    require_finite_loss(loss_sum, step);

    const double lr = lr_at(step, cfg);
    std::map<std::string, std::vector<double>> frozen;
    if (cfg.assert_frozen) frozen = snapshot(state, trainable);
    adam.step(state.params, trainable, lr);
    if (cfg.assert_frozen) check_frozen(state, frozen, step);

    MetricsRecord rec;
    rec.step = step;
    rec.loss = loss_sum;
    rec.train_wer = words ? static_cast<double>(errors) / static_cast<double>(words) : 0.0;
    rec.lr = lr;
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    sink.write(rec);
    res.metrics.push_back(rec);
    if (hooks.on_metrics) hooks.on_metrics(rec);
    if (hooks.on_step) hooks.on_step(step, state);

    if (out.dir && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps) {
      save_finetuned(*out.dir / ("step_" + std::to_string(step) + ".ckpt"), state, vocab, cfg, step);
    }
  }
  zero_grads(state);
  if (out.dir) save_finetuned(*out.dir / "final.ckpt", state, vocab, cfg, cfg.steps);
  return res;
}

double EvalReport::corpus_wer() const {
  return ref_words ? static_cast<double>(errors) / static_cast<double>(ref_words) : 0.0;
}

std::string EvalReport::summary() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "utterances=%zu words=%zu errors=%zu corpus_wer=%.6f",
                utterances.size(), ref_words, errors, corpus_wer());
  return buf;
}

EvalReport evaluate(const ModelState& state, const Vocabulary& vocab,
                    const std::vector<PairedItem>& data, bool use_enrollment,
                    std::size_t enroll_max_samples) {
  if (state.config.n_classes != vocab.size()) {
    throw DataError("model has " + std::to_string(state.config.n_classes) +
                    " outputs, vocabulary has " + std::to_string(vocab.size()) + " tokens");
  }
  NoGradGuard guard;
  EvalReport rep;
  for (const auto& it : data) {
    const auto ref = split_words(it.transcript);
    if (ref.empty()) throw DataError("evaluate: utterance " + it.id + " has an empty transcript");
    const Waveform e = truncate_enrollment_at(it.enrollment, enroll_max_samples, 0);
    std::vector<double> emb;
    if (state.config.adapter != AdapterKind::None) emb = extract_embedding(it.enrollment);
    const auto fwd = forward(state, it.mixture,
                             {.enrollment = use_enrollment ? &e : nullptr,
                              .embedding = emb.empty() ? nullptr : &emb});
    const auto ids = ctc_decode(ops::log_softmax(fwd.logits));
    UtteranceResult u;
    u.id = it.id;
    u.reference = it.transcript;
    u.hypothesis = vocab.decode({ids.begin(), ids.end()});
    u.errors = edit_distance(split_words(u.hypothesis), ref);
    u.ref_words = ref.size();
    rep.errors += u.errors;
    rep.ref_words += u.ref_words;
    rep.utterances.push_back(std::move(u));
  }
  return rep;
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& u : report.utterances) {
    nlohmann::ordered_json j;
    j["id"] = u.id;
    j["reference"] = u.reference;
    j["hypothesis"] = u.hypothesis;
    j["errors"] = u.errors;
    j["ref_words"] = u.ref_words;
    j["wer"] = u.ref_words ? static_cast<double>(u.errors) / static_cast<double>(u.ref_words) : 0.0;
    os << j.dump() << '\n';
  }
  nlohmann::ordered_json s;
  s["summary"] = true;
  s["utterances"] = report.utterances.size();
  s["errors"] = report.errors;
  s["ref_words"] = report.ref_words;
  s["corpus_wer"] = report.corpus_wer();
  os << s.dump() << '\n';
}

void save_finetuned(const std::filesystem::path& path, const ModelState& state,
                    const Vocabulary& vocab, const TrainConfig& cfg, std::size_t step) {
  save_model(path, state,
             {{"kind", "finetuned"},
              {"mode", to_string(cfg.mode)},
              {"seed", std::to_string(cfg.seed)},
              {"step", std::to_string(step)},
              {"vocab", join_tokens(vocab)},
              {"enrollment_enabled", cfg.enrollment_enabled ? "true" : "false"},
              {"enroll_max_samples", std::to_string(cfg.enroll_max_samples)}});
}

FinetunedModel load_finetuned(const std::filesystem::path& path) {
  KeyValues extra;
  FinetunedModel m;
  m.state = load_model(path, &extra);
  if (kv_string(extra, "kind", "") != "finetuned") {
    throw DataError(path.string() + " is not a fine-tuned checkpoint");
  }
  m.vocab = Vocabulary(split_words(kv_string(extra, "vocab", "")));
  m.enrollment_enabled = kv_bool(extra, "enrollment_enabled", true);
  m.enroll_max_samples =
      static_cast<std::size_t>(kv_int(extra, "enroll_max_samples", 48000));
  return m;
}

}  // namespace tspt
