// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tspt {

/// Character vocabulary for CTC. Index 0 is the blank `<b>`; the word
/// separator is `|`.
class Vocabulary {
 public:
  static constexpr const char* kBlank = "<b>";
  static constexpr const char* kWordSep = "|";

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Blank, separator and the synthetic phone alphabet.
  static Vocabulary synthetic();
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Characters of `text` as token ids, spaces mapped to the separator.
  /// Throws DataError for characters outside the vocabulary.
  std::vector<std::size_t> encode(const std::string& text) const;
  /// Inverse of encode (blanks skipped).
  std::string decode(const std::vector<std::size_t>& ids) const;

  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
};

/// Splits on runs of whitespace.
std::vector<std::string> split_words(const std::string& text);

}  // namespace tspt
