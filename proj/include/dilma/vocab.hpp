#pragma once

#include "dilma/common.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace dilma {

inline std::string normalize_text(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<char>(std::tolower(c)));
  return out;
}

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

// Token/id bijection with fixed special ids. Ids are assigned in sorted token
// order so a vocabulary is a pure function of its token set.
class Vocabulary {
 public:
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";
  static constexpr const char* kMaskToken = "<mask>";

  Vocabulary() = default;

  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    v.id_to_token_ = {kPadToken, kUnkToken, kMaskToken};
    std::set<std::string> uniq;
    for (const auto& t : tokens) {
      if (t != kPadToken && t != kUnkToken && t != kMaskToken) uniq.insert(t);
    }
    v.id_to_token_.insert(v.id_to_token_.end(), uniq.begin(), uniq.end());
    for (size_t i = 0; i < v.id_to_token_.size(); ++i) {
      v.token_to_id_[v.id_to_token_[i]] = static_cast<int>(i);
    }
    return v;
  }

  static Vocabulary from_texts(const std::vector<std::string>& texts) {
    std::vector<std::string> tokens;
    for (const auto& t : texts) {
      auto words = split_words(normalize_text(t));
      tokens.insert(tokens.end(), words.begin(), words.end());
    }
    return from_tokens(tokens);
  }

  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? unk_id() : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range(cat("token id out of range: ", id));
    return id_to_token_[static_cast<size_t>(id)];
  }

  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

  int pad_id() const { return 0; }
  int unk_id() const { return 1; }
  int mask_id() const { return 2; }
  bool is_special(int id) const { return id >= 0 && id <= 2; }

  int size() const { return static_cast<int>(id_to_token_.size()); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  uint64_t hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& t : id_to_token_) {
      h = fnv1a(t, h);
      h = fnv1a("\n", h);
    }
    return h;
  }

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Lowercased whitespace tokenization; out-of-vocabulary words map to <unk>.
inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
  auto words = split_words(normalize_text(text));
  if (words.empty()) {
    throw std::invalid_argument("tokenize: input is empty after normalization");
  }
  TokenSequence seq;
  seq.ids.reserve(words.size());
  for (const auto& w : words) seq.ids.push_back(vocab.id(w));
  return seq;
}

inline std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::string out;
  for (size_t i = 0; i < seq.ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.token(seq.ids[i]);
  }
  return out;
}

}  // namespace dilma
