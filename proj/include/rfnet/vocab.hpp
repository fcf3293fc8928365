#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "rfnet/common.hpp"

namespace rfnet {

// Lowercase, delete every character outside [a-z] and whitespace, then split
// on whitespace runs. Tokens that end up empty are dropped.
inline std::vector<std::string> normalize_tokenize(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    unsigned char u = static_cast<unsigned char>(ch);
    char lo = static_cast<char>(std::tolower(u));
    if ((lo >= 'a' && lo <= 'z') || std::isspace(u)) cleaned.push_back(lo);
  }
  std::vector<std::string> out;
  std::string cur;
  for (char ch : cleaned) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Token <-> id mapping with four reserved entries and deterministic id
// assignment: after the reserved block, surviving tokens get ids in
// lexicographic order, so two builds over the same corpus agree exactly.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kStart = 1;
  static constexpr std::size_t kEnd = 2;
  static constexpr std::size_t kUnk = 3;

  Vocabulary() { init_reserved(); }

  // Builds from tokenized captions. Tokens seen fewer than min_count times
  // map to <unk>; their occurrences still contribute to nothing else.
  static Vocabulary build(const std::vector<std::vector<std::string>>& captions,
                          std::size_t min_count) {
    Vocabulary v;
    std::map<std::string, std::uint64_t> counts;  // ordered -> lexicographic ids
    for (const auto& cap : captions)
      for (const auto& tok : cap) ++counts[tok];
    for (const auto& [tok, cnt] : counts) {
      if (cnt < min_count) continue;
      v.id_of_[tok] = v.tokens_.size();
      v.tokens_.push_back(tok);
      v.counts_.push_back(cnt);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  std::size_t id(const std::string& tok) const {
    auto it = id_of_.find(tok);
    return it == id_of_.end() ? kUnk : it->second;
  }

  const std::string& token(std::size_t id) const {
    if (id >= tokens_.size())
      throw ValueError("Vocabulary::token: id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  std::uint64_t count(std::size_t id) const {
    if (id >= counts_.size())
      throw ValueError("Vocabulary::count: id " + std::to_string(id) + " out of range");
    return counts_[id];
  }

  std::vector<std::size_t> encode(const std::vector<std::string>& toks) const {
    std::vector<std::size_t> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) ids.push_back(id(t));
    return ids;
  }

  std::vector<std::string> decode(const std::vector<std::size_t>& ids) const {
    std::vector<std::string> toks;
    toks.reserve(ids.size());
    for (std::size_t i : ids) toks.push_back(token(i));
    return toks;
  }

  // The n most frequent non-reserved token ids; count ties break toward the
  // lower id (i.e. lexicographically earlier token).
  std::vector<std::size_t> frequent_word_set(std::size_t n) const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 4; i < tokens_.size(); ++i) ids.push_back(i);
    std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
      if (counts_[a] != counts_[b]) return counts_[a] > counts_[b];
      return a < b;
    });
    if (ids.size() > n) ids.resize(n);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  // Serialization: one "token<TAB>count" line per id, in id order. Reserved
  // entries are included so the round trip is a pure identity.
  std::vector<std::string> to_lines() const {
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      lines.push_back(tokens_[i] + "\t" + std::to_string(counts_[i]));
    return lines;
  }

  static Vocabulary from_lines(const std::vector<std::string>& lines) {
    Vocabulary v;
    v.tokens_.clear();
    v.counts_.clear();
    v.id_of_.clear();
    for (const auto& line : lines) {
      auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw ValueError("Vocabulary::from_lines: missing tab in '" + line + "'");
      std::string tok = line.substr(0, tab);
      std::uint64_t cnt = std::stoull(line.substr(tab + 1));
      v.id_of_[tok] = v.tokens_.size();
      v.tokens_.push_back(tok);
      v.counts_.push_back(cnt);
    }
    if (v.tokens_.size() < 4)
      throw ValueError("Vocabulary::from_lines: reserved entries missing");
    return v;
  }

 private:
  void init_reserved() {
    for (const char* t : {"<pad>", "<start>", "<end>", "<unk>"}) {
      id_of_[t] = tokens_.size();
      tokens_.push_back(t);
      counts_.push_back(0);
    }
  }

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, std::size_t> id_of_;
};

}  // namespace rfnet
