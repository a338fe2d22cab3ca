// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tspt/corpus/inventory.hpp"
#include "tspt/corpus/vocab.hpp"
#include "tspt/kv.hpp"
#include "tspt/model/model.hpp"

namespace tspt {

enum class TrainMode { Pretrain, Finetune, FinetuneAdapted };

struct TrainConfig {
  TrainMode mode = TrainMode::Pretrain;
  std::size_t steps = 300;
  double peak_lr = 5e-4;
  std::size_t warmup_steps = 30;
  double batch_seconds = 30.0;
  std::size_t batch_size = 0;  // 0: derived from batch_seconds
  bool freeze_cnn = false;     // fine-tuning always freezes the CNN
  std::size_t freeze_backbone_steps = 0;
  std::uint64_t seed = 1;
  AdapterKind adapter = AdapterKind::None;
  AdapterSite adapter_site;
  bool enrollment_enabled = true;
  std::size_t enroll_max_samples = 48000;
  double mask_start_rate = 0.08;
  std::size_t mask_span = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-6;
  double weight_decay = 0.0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  bool assert_frozen = false;        // verify frozen tensors after every step
  ModelConfig model;

  void validate() const;
  KeyValues to_kv() const;
  /// Every TrainConfig field plus the model keys; unknown keys are errors.
  static TrainConfig from_kv(const KeyValues& kv);
  static TrainConfig load(const std::filesystem::path& path);
};

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& s);

/// Linear warmup 0 -> peak over warmup_steps, then linear decay to 0 at
/// cfg.steps. Update number s (1-based) uses lr_at(s).
double lr_at(std::size_t step, const TrainConfig& cfg);

struct MetricsRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::optional<double> masked_accuracy;  // pretrain
  std::optional<double> train_wer;        // finetune
  double lr = 0.0;
  double wall_ms = 0.0;

  std::string to_json() const;
};

class Adam {
 public:
  Adam(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  /// One update of every parameter in `trainable`; state of other
  /// parameters is left untouched.
  void step(ParamMap& params, const std::set<std::string>& trainable, double lr);

 private:
  struct Slot {
    std::vector<double> m, v;
    std::size_t t = 0;
  };
  double beta1_, beta2_, eps_, weight_decay_;
  std::map<std::string, Slot> slots_;
};

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_metrics;
  /// Called after update `step` has been applied.
  std::function<void(std::size_t step, const ModelState&)> on_step;
};

struct RunOutput {
  std::optional<std::filesystem::path> dir;  // metrics.jsonl and checkpoints
};

struct TrainResult {
  ModelState state;
  std::vector<MetricsRecord> metrics;
  std::size_t skipped_samples = 0;  // CTC targets longer than the input
};

/// cfg.batch_size, or batch_seconds of audio at the given mean utterance
/// length (at least 1).
std::size_t derive_batch_size(const TrainConfig& cfg, double mean_samples, int sample_rate);

/// Masked-prediction pre-training with on-the-fly mixing.
TrainResult pretrain(const SpeakerInventory& inv, const AudioStore& audio,
                     const TrainConfig& cfg, const RunOutput& out = {},
                     const TrainHooks& hooks = {});

/// Masked accuracy on `samples` freshly simulated training mixtures.
double evaluate_masked_accuracy(const ModelState& state, const SpeakerInventory& inv,
                                const AudioStore& audio, const TrainConfig& cfg,
                                std::size_t samples, std::uint64_t seed);

struct PairedItem {
  UtteranceId id;
  Waveform mixture;
  Waveform enrollment;
  std::string transcript;
  std::vector<int> target;  // token ids
};

/// Mixtures of `manifest`, enrollments from `enroll_manifest` via
/// `enroll_map`, transcripts encoded with `vocab`.
std::vector<PairedItem> load_paired_data(const std::filesystem::path& manifest,
                                         const std::filesystem::path& enroll_map,
                                         const std::filesystem::path& enroll_manifest,
                                         const std::optional<std::filesystem::path>& transcripts,
                                         const Vocabulary& vocab);

/// CTC fine-tuning of a pre-trained model.
TrainResult finetune(const std::vector<PairedItem>& data, const ModelState& pretrained,
                     const Vocabulary& vocab, const TrainConfig& cfg,
                     const RunOutput& out = {}, const TrainHooks& hooks = {});

/// Names the fine-tuning freeze policy leaves trainable at `step`.
std::set<std::string> finetune_trainable(const ModelState& state, const TrainConfig& cfg,
                                         std::size_t step);

struct UtteranceResult {
  UtteranceId id;
  std::string reference;
  std::string hypothesis;
  std::size_t errors = 0;
  std::size_t ref_words = 0;
};

struct EvalReport {
  std::vector<UtteranceResult> utterances;
  std::size_t errors = 0;
  std::size_t ref_words = 0;
  double corpus_wer() const;
  std::string summary() const;
};

/// Greedy CTC decoding and WER over paired data. Transcripts required.
/// Enrollments are cut to their first `enroll_max_samples` samples.
EvalReport evaluate(const ModelState& state, const Vocabulary& vocab,
                    const std::vector<PairedItem>& data, bool use_enrollment,
                    std::size_t enroll_max_samples);

void write_report(const std::filesystem::path& path, const EvalReport& report);

/// Fine-tuned checkpoints carry the vocabulary and enrollment mode.
void save_finetuned(const std::filesystem::path& path, const ModelState& state,
                    const Vocabulary& vocab, const TrainConfig& cfg, std::size_t step);
struct FinetunedModel {
  ModelState state;
  Vocabulary vocab;
  bool enrollment_enabled = true;
  std::size_t enroll_max_samples = 48000;
};
FinetunedModel load_finetuned(const std::filesystem::path& path);

}  // namespace tspt
