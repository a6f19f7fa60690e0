#pragma once

#include "dilma/common.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace dilma {

// Word-level Levenshtein distance: minimum number of single-token insertions,
// deletions and substitutions turning a into b. Standard O(|a|*|b|) dynamic
// program with two rolling rows.
template <typename T>
int levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("levenshtein: sequences must be non-empty");
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline int wer(const TokenSequence& a, const TokenSequence& b) { return levenshtein(a.ids, b.ids); }

}  // namespace dilma
