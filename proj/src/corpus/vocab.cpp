// SPDX-License-Identifier: Apache-2.0
#include "tspt/corpus/vocab.hpp"

#include <fstream>
#include <sstream>

#include "tspt/corpus/synth.hpp"
#include "tspt/error.hpp"

namespace tspt {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty() || tokens_[0] != kBlank) {
    throw DataError(std::string("vocabulary must start with the blank symbol ") + kBlank);
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) {
      throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::synthetic() {
  std::vector<std::string> tokens{kBlank, kWordSep};
  for (char p : kPhones) tokens.emplace_back(1, p);
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& t : tokens_) os << t << '\n';
}

std::vector<std::size_t> Vocabulary::encode(const std::string& text) const {
  std::vector<std::size_t> ids;
  bool pending_sep = false;
  for (char c : text) {
    if (c == ' ' || c == '\t') {
      pending_sep = !ids.empty();
      continue;
    }
    if (pending_sep) {
      ids.push_back(index_.at(kWordSep));
      pending_sep = false;
    }
    auto it = index_.find(std::string(1, c));
    if (it == index_.end() || it->second == 0) {
      throw DataError(std::string("character '") + c + "' not in vocabulary");
    }
    ids.push_back(it->second);
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<std::size_t>& ids) const {
  std::string out;
  for (auto id : ids) {
    if (id == 0) continue;
    const auto& t = token(id);
    out += t == kWordSep ? std::string(" ") : t;
  }
  return out;
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream ss(text);
  std::vector<std::string> words;
  std::string w;
  while (ss >> w) words.push_back(w);
  return words;
}

}  // namespace tspt
