// SPDX-License-Identifier: Apache-2.0
#include "tspt/corpus/inventory.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "tspt/error.hpp"

namespace tspt {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

template <class F>
void for_each_line(const fs::path& path, F&& f) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    f(line, lineno);
  }
}

std::string where(const fs::path& p, std::size_t lineno) {
  return p.string() + ":" + std::to_string(lineno);
}

}  // namespace

std::vector<UtteranceId> SpeakerInventory::utterance_ids() const {
  std::vector<UtteranceId> ids;
  ids.reserve(speaker_of.size());
  for (const auto& [id, _] : speaker_of) ids.push_back(id);
  return ids;
}

void SpeakerInventory::add(const UtteranceId& id, const SpeakerId& speaker,
                           fs::path path, std::size_t samples) {
  if (speaker_of.count(id)) throw DataError("duplicate utterance_id: " + id);
  speaker_of[id] = speaker;
  auto& g = groups[speaker];
  g.insert(std::upper_bound(g.begin(), g.end(), id), id);
  paths[id] = std::move(path);
  num_samples[id] = samples;
}

void SpeakerInventory::validate() const {
  std::size_t total = 0;
  for (const auto& [spk, ids] : groups) {
    if (ids.empty()) throw DataError("speaker with zero utterances: " + spk);
    for (const auto& id : ids) {
      auto it = speaker_of.find(id);
      if (it == speaker_of.end() || it->second != spk) {
        throw DataError("inventory inconsistent for utterance " + id);
      }
    }
    total += ids.size();
  }
  if (total != speaker_of.size()) {
    throw DataError("inventory inconsistent: utterance missing from groups");
  }
}

SpeakerInventory build_inventory(const fs::path& manifest_path) {
  SpeakerInventory inv;
  const fs::path root = manifest_path.parent_path();
  for_each_line(manifest_path, [&](const std::string& line, std::size_t lineno) {
    auto cols = split_tabs(line);
    if (cols.size() != 4) {
      throw DataError("manifest row needs 4 columns at " + where(manifest_path, lineno));
    }
    std::size_t samples = 0;
    auto [ptr, ec] = std::from_chars(cols[3].data(), cols[3].data() + cols[3].size(), samples);
    if (ec != std::errc() || ptr != cols[3].data() + cols[3].size()) {
      throw DataError("bad num_samples at " + where(manifest_path, lineno));
    }
    fs::path audio = (root / cols[2]).lexically_normal();
    if (!fs::exists(audio)) {
      throw DataError("utterance " + cols[0] + " references missing audio " +
                      audio.string());
    }
    if (inv.speaker_of.count(cols[0])) {
      throw DataError("duplicate utterance_id " + cols[0] + " at " +
                      where(manifest_path, lineno));
    }
    inv.add(cols[0], cols[1], audio, samples);
  });
  inv.validate();
  return inv;
}

void write_manifest(const SpeakerInventory& inv, const fs::path& manifest_path) {
  if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());
  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + manifest_path.string());
  const fs::path root = manifest_path.parent_path().lexically_normal();
  for (const auto& [id, spk] : inv.speaker_of) {
    fs::path p = inv.paths.at(id);
    fs::path rel = p.is_absolute() == root.is_absolute() && !root.empty()
                       ? p.lexically_relative(root)
                       : p;
    os << id << '\t' << spk << '\t' << rel.generic_string() << '\t'
       << inv.num_samples.at(id) << '\n';
  }
}

std::map<UtteranceId, LabelSequence> load_labels(const fs::path& path) {
  std::map<UtteranceId, LabelSequence> out;
  for_each_line(path, [&](const std::string& line, std::size_t lineno) {
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("label row needs an id and labels at " + where(path, lineno));
    }
    UtteranceId id = line.substr(0, tab);
    std::istringstream ss(line.substr(tab + 1));
    LabelSequence seq;
    std::string tok;
    while (ss >> tok) {
      int v = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size() || v < 0) {
        throw DataError("bad label '" + tok + "' at " + where(path, lineno));
      }
      seq.push_back(v);
    }
    if (!out.emplace(id, std::move(seq)).second) {
      throw DataError("duplicate label row for " + id);
    }
  });
  return out;
}

void write_labels(const std::map<UtteranceId, LabelSequence>& labels,
                  const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& [id, seq] : labels) {
    os << id << '\t';
    for (std::size_t i = 0; i < seq.size(); ++i) os << (i ? " " : "") << seq[i];
    os << '\n';
  }
}

void attach_labels(SpeakerInventory& inv,
                   const std::map<UtteranceId, LabelSequence>& labels) {
  for (const auto& [id, seq] : labels) {
    if (!inv.speaker_of.count(id)) {
      throw DataError("labels given for unknown utterance " + id);
    }
    inv.labels[id] = seq;
  }
}

std::map<UtteranceId, std::string> load_pairs(const fs::path& path) {
  std::map<UtteranceId, std::string> out;
  for_each_line(path, [&](const std::string& line, std::size_t lineno) {
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("expected two tab-separated columns at " + where(path, lineno));
    }
    if (!out.emplace(line.substr(0, tab), line.substr(tab + 1)).second) {
      throw DataError("duplicate id at " + where(path, lineno));
    }
  });
  return out;
}

void write_pairs(const std::map<UtteranceId, std::string>& pairs, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& [k, v] : pairs) os << k << '\t' << v << '\n';
}

AudioStore AudioStore::load(const SpeakerInventory& inv) {
  AudioStore store;
  for (const auto& [id, path] : inv.paths) {
    Waveform w = load_wav(path);
    if (w.samples.empty()) throw DataError("empty audio for utterance " + id);
    store.put(id, std::move(w));
  }
  return store;
}

const Waveform& AudioStore::get(const UtteranceId& id) const {
  auto it = audio_.find(id);
  if (it == audio_.end()) throw DataError("no audio loaded for utterance " + id);
  return it->second;
}

}  // namespace tspt
