#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dilma {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// FNV-1a 64, used for config, vocabulary and checkpoint fingerprints.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 1469598103934665603ull) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// Ordered token ids; the unit that gets attacked and measured.
struct TokenSequence {
  std::vector<int> ids;

  TokenSequence() = default;
  explicit TokenSequence(std::vector<int> v) : ids(std::move(v)) {}

  size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSequence& o) const { return ids == o.ids; }
};

struct LabeledExample {
  TokenSequence sequence;
  int label = 0;
  std::string raw_text;
};

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

// Round-trippable decimal representation.
inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace dilma
