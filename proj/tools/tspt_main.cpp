// SPDX-License-Identifier: Apache-2.0
// Command-line front end: corpus generation, labelling, training, scoring.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tspt/corpus/synthetic_corpus.hpp"
#include "tspt/corpus/vocab.hpp"
#include "tspt/error.hpp"
#include "tspt/labeler/labeler.hpp"
#include "tspt/mixer/mixer.hpp"
#include "tspt/model/model.hpp"
#include "tspt/trainer/trainer.hpp"

namespace fs = std::filesystem;
using namespace tspt;

namespace {

// --steps keeps the warmup fraction of the config.
void override_steps(TrainConfig& cfg, std::size_t steps) {
  cfg.warmup_steps = static_cast<std::size_t>(
      static_cast<double>(cfg.warmup_steps) * static_cast<double>(steps) /
      static_cast<double>(cfg.steps) + 0.5);
  cfg.steps = steps;
}

// Sibling file of the manifest if `explicit_path` is empty.
fs::path sibling_or(const std::string& explicit_path, const fs::path& manifest,
                    const char* name) {
  if (!explicit_path.empty()) return explicit_path;
  return manifest.parent_path() / name;
}

std::optional<fs::path> optional_sibling(const std::string& explicit_path,
                                         const fs::path& manifest, const char* name) {
  if (!explicit_path.empty()) return fs::path(explicit_path);
  const auto p = manifest.parent_path() / name;
  if (fs::exists(p)) return p;
  return std::nullopt;
}

Vocabulary vocab_for(const std::string& path) {
  return path.empty() ? Vocabulary::synthetic() : Vocabulary::load(path);
}

void print_progress(const MetricsRecord& r, std::size_t every) {
  if (r.step % every != 0 && r.step != 1) return;
  std::cerr << r.to_json() << '\n';
}

struct GenCorpusArgs {
  std::string out;
  CorpusSpec spec;
};

void gen_corpus(const GenCorpusArgs& a) {
  auto corpus = make_synthetic_corpus(a.spec);
  write_corpus(corpus, a.out);
  std::cout << "wrote " << corpus.inventory.utterance_count() << " utterances from "
            << corpus.inventory.speaker_count() << " speakers to " << a.out << '\n';
}

struct MakeLabelsArgs {
  std::string manifest, out, codebook, from_ckpt;
  std::size_t k = kDefaultClusters, iters = 50, layer = 1;
  std::uint64_t seed = 1;
};

void make_labels(const MakeLabelsArgs& a) {
  const auto inv = build_inventory(a.manifest);
  const auto audio = AudioStore::load(inv);
  std::map<UtteranceId, LabelSequence> labels;
  Codebook cb;
  if (a.from_ckpt.empty()) {
    auto res = label_corpus(inv, audio, a.k, a.iters, a.seed);
    labels = std::move(res.labels);
    cb = std::move(res.codebook);
  } else {
    // Hidden states are already at the encoder rate.
    const auto state = load_model(a.from_ckpt);
    std::vector<FeatureMatrix> parts;
    const auto ids = inv.utterance_ids();
    for (const auto& id : ids) parts.push_back(layer_features(state, audio.get(id), a.layer));
    cb = kmeans_fit(stack_features(parts), a.k, a.iters, a.seed);
    for (std::size_t i = 0; i < ids.size(); ++i) labels[ids[i]] = assign_labels(parts[i], cb);
  }
  write_labels(labels, a.out);
  if (!a.codebook.empty()) save_codebook(a.codebook, cb);
  if (!cb.wcss_history.empty()) {
    std::printf("k=%zu iterations=%zu wcss=%.6g\n", cb.k, cb.wcss_history.size(),
                cb.wcss_history.back());
  }
}

struct PretrainArgs {
  std::string manifest, labels, config, out;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  bool no_enroll = false;
};

void run_pretrain(const PretrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = TrainConfig::load(a.config);
  if (a.steps) override_steps(cfg, *a.steps);
  if (a.seed) cfg.seed = *a.seed;
  if (a.no_enroll) cfg.enrollment_enabled = false;
  cfg.mode = TrainMode::Pretrain;
  auto inv = build_inventory(a.manifest);
  attach_labels(inv, load_labels(a.labels));
  const auto audio = AudioStore::load(inv);
  fs::create_directories(a.out);
  save_kv(fs::path(a.out) / "config.kv", cfg.to_kv());
  TrainHooks hooks;
  hooks.on_metrics = [](const MetricsRecord& r) { print_progress(r, 25); };
  const auto res = pretrain(inv, audio, cfg, {fs::path(a.out)}, hooks);
  std::printf("final loss %.6f masked_accuracy %.4f\n", res.metrics.back().loss,
              res.metrics.back().masked_accuracy.value_or(0.0));
}

struct PairedArgs {
  std::string manifest, enroll_map, enroll_manifest, transcripts, vocab;
};

std::vector<PairedItem> load_paired(const PairedArgs& a, const Vocabulary& vocab,
                                    bool need_transcripts) {
  const fs::path m = a.manifest;
  const auto transcripts = optional_sibling(a.transcripts, m, "transcripts.tsv");
  if (need_transcripts && !transcripts) {
    throw DataError("no transcripts given and " + (m.parent_path() / "transcripts.tsv").string() +
                    " does not exist");
  }
  auto enroll_manifest = optional_sibling(a.enroll_manifest, m, "enroll_manifest.tsv");
  return load_paired_data(m, sibling_or(a.enroll_map, m, "enroll_map.tsv"),
                          enroll_manifest.value_or(m), transcripts, vocab);
}

struct FinetuneArgs {
  PairedArgs data;
  std::string ckpt, config, out, adapter = "none", adapter_site;
  std::optional<std::size_t> steps, freeze_backbone_steps;
  std::optional<std::uint64_t> seed;
  bool no_enroll = false;
};

void run_finetune(const FinetuneArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) {
    auto kv = load_kv(a.config);
    kv.erase("mode");
    cfg = TrainConfig::from_kv(kv);
  }
  if (a.steps) override_steps(cfg, *a.steps);
  if (a.seed) cfg.seed = *a.seed;
  if (a.freeze_backbone_steps) cfg.freeze_backbone_steps = *a.freeze_backbone_steps;
  if (a.no_enroll) cfg.enrollment_enabled = false;
  cfg.adapter = parse_adapter_kind(a.adapter);
  if (!a.adapter_site.empty()) {
    cfg.adapter_site = parse_adapter_site(a.adapter_site);
  } else if (cfg.adapter == AdapterKind::CLN) {
    cfg.adapter_site = {AdapterSite::Where::LayerNorms, 0};
  } else if (cfg.adapter != AdapterKind::None && cfg.adapter_site.where == AdapterSite::Where::None) {
    cfg.adapter_site = {AdapterSite::Where::PostCnn, 0};
  }
  cfg.mode = cfg.adapter == AdapterKind::None ? TrainMode::Finetune : TrainMode::FinetuneAdapted;

  const auto pretrained = load_model(a.ckpt);
  cfg.model = pretrained.config;
  const auto vocab = vocab_for(a.data.vocab);
  const auto data = load_paired(a.data, vocab, true);
  fs::create_directories(a.out);
  save_kv(fs::path(a.out) / "config.kv", cfg.to_kv());
  TrainHooks hooks;
  hooks.on_metrics = [](const MetricsRecord& r) { print_progress(r, 25); };
  const auto res = finetune(data, pretrained, vocab, cfg, {fs::path(a.out)}, hooks);
  if (res.skipped_samples > 0) {
    std::cerr << "warning: " << res.skipped_samples
              << " samples skipped (transcript longer than the mixture allows)\n";
  }
  std::printf("final loss %.6f train_wer %.4f\n", res.metrics.back().loss,
              res.metrics.back().train_wer.value_or(0.0));
}

struct EvaluateArgs {
  PairedArgs data;
  std::string ckpt, out;
  bool no_enroll = false;
};

void run_evaluate(const EvaluateArgs& a) {
  const auto model = load_finetuned(a.ckpt);
  const auto data = load_paired(a.data, model.vocab, true);
  const bool enroll = model.enrollment_enabled && !a.no_enroll;
  const auto report = evaluate(model.state, model.vocab, data, enroll, model.enroll_max_samples);
  write_report(a.out, report);
  std::cout << report.summary() << '\n';
}

struct MixDumpArgs {
  std::string manifest, out, transcripts;
  std::size_t n = 100;
  std::uint64_t seed = 1;
};

void run_mix_dump(const MixDumpArgs& a) {
  const auto inv = build_inventory(a.manifest);
  const auto audio = AudioStore::load(inv);
  std::map<UtteranceId, std::string> text;
  const auto tpath = optional_sibling(a.transcripts, a.manifest, "transcripts.tsv");
  if (tpath) text = load_pairs(*tpath);
  const auto res = dump_mixtures(inv, audio, a.n, a.seed, a.out, tpath ? &text : nullptr);
  if (res.clamped_samples > 0) {
    std::cerr << "warning: " << res.clamped_samples
              << " mixture samples clamped to [-1, 1] for WAV export\n";
  }
  std::cout << "wrote " << res.samples << " mixtures to " << a.out << '\n';
}

void add_paired_options(CLI::App* cmd, PairedArgs& p) {
  cmd->add_option("--manifest", p.manifest, "mixture manifest (e.g. from mix-dump)")->required();
  cmd->add_option("--enroll-map", p.enroll_map,
                  "utterance -> enrollment id map (default: enroll_map.tsv next to the manifest)");
  cmd->add_option("--enroll-manifest", p.enroll_manifest,
                  "manifest holding the enrollment utterances (default: enroll_manifest.tsv "
                  "next to the manifest, else the manifest itself)");
  cmd->add_option("--transcripts", p.transcripts,
                  "utterance -> transcript map (default: transcripts.tsv next to the manifest)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Target-speaker speech pre-training toolkit"};
  app.require_subcommand(1);

  GenCorpusArgs gen;
  auto* c_gen = app.add_subcommand("gen-corpus", "write a synthetic multi-speaker corpus");
  c_gen->add_option("--out", gen.out, "output directory")->required();
  c_gen->add_option("--speakers", gen.spec.speakers)->capture_default_str();
  c_gen->add_option("--utts", gen.spec.utts_per_speaker, "utterances per speaker")->capture_default_str();
  c_gen->add_option("--min-dur", gen.spec.min_duration_s, "seconds")->capture_default_str();
  c_gen->add_option("--max-dur", gen.spec.max_duration_s, "seconds")->capture_default_str();
  c_gen->add_option("--seed", gen.spec.seed)->capture_default_str();

  MakeLabelsArgs lab;
  auto* c_lab = app.add_subcommand("make-labels", "k-means frame labels at the encoder rate");
  c_lab->add_option("--manifest", lab.manifest)->required();
  c_lab->add_option("--k", lab.k)->capture_default_str();
  c_lab->add_option("--iters", lab.iters)->capture_default_str();
  c_lab->add_option("--seed", lab.seed)->capture_default_str();
  c_lab->add_option("--out", lab.out, "labels TSV")->required();
  c_lab->add_option("--codebook", lab.codebook, "also save the codebook here");
  c_lab->add_option("--from-ckpt", lab.from_ckpt, "cluster hidden states of this model instead of log-mels");
  c_lab->add_option("--layer", lab.layer, "hidden layer for --from-ckpt")->capture_default_str();

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "masked prediction pre-training on simulated mixtures");
  c_pre->add_option("--manifest", pre.manifest)->required();
  c_pre->add_option("--labels", pre.labels)->required();
  c_pre->add_option("--config", pre.config, "key = value config file");
  c_pre->add_option("--out", pre.out, "checkpoint directory")->required();
  c_pre->add_option("--steps", pre.steps, "overrides the config, warmup scaled along");
  c_pre->add_option("--seed", pre.seed, "overrides the config");
  c_pre->add_flag("--no-enroll", pre.no_enroll, "single-stream ablation");

  FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "CTC fine-tuning on paired mixtures");
  add_paired_options(c_ft, ft.data);
  c_ft->add_option("--ckpt", ft.ckpt, "pre-trained checkpoint")->required();
  c_ft->add_option("--config", ft.config, "key = value config file");
  c_ft->add_option("--adapter", ft.adapter, "none|add|film|cln")->capture_default_str();
  c_ft->add_option("--adapter-site", ft.adapter_site, "post_cnn|layer<N>_ln");
  c_ft->add_option("--vocab", ft.data.vocab, "token list (default: synthetic alphabet)");
  c_ft->add_option("--steps", ft.steps, "overrides the config, warmup scaled along");
  c_ft->add_option("--seed", ft.seed, "overrides the config");
  c_ft->add_option("--freeze-backbone-steps", ft.freeze_backbone_steps, "overrides the config");
  c_ft->add_flag("--no-enroll", ft.no_enroll, "single-stream ablation");
  c_ft->add_option("--out", ft.out, "checkpoint directory")->required();

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "greedy CTC decoding and WER report");
  add_paired_options(c_ev, ev.data);
  c_ev->add_option("--ckpt", ev.ckpt, "fine-tuned checkpoint")->required();
  c_ev->add_flag("--no-enroll", ev.no_enroll, "ignore the enrollment stream");
  c_ev->add_option("--out", ev.out, "report JSONL")->required();

  MixDumpArgs mix;
  auto* c_mix = app.add_subcommand("mix-dump", "write simulated mixtures and their metadata");
  c_mix->add_option("--manifest", mix.manifest)->required();
  c_mix->add_option("--n", mix.n)->capture_default_str();
  c_mix->add_option("--seed", mix.seed)->capture_default_str();
  c_mix->add_option("--out", mix.out)->required();
  c_mix->add_option("--transcripts", mix.transcripts,
                    "transcripts of the source utterances (default: transcripts.tsv next to the manifest)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*c_gen) gen_corpus(gen);
    if (*c_lab) make_labels(lab);
    if (*c_pre) run_pretrain(pre);
    if (*c_ft) run_finetune(ft);
    if (*c_ev) run_evaluate(ev);
    if (*c_mix) run_mix_dump(mix);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
