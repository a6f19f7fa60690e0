#pragma once

#include "dilma/common.hpp"
#include "dilma/rng.hpp"
#include "dilma/vocab.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace dilma {

struct RawExample {
  std::string text;
  int label = 0;
};

// One half per classifier; the substitute side never sees the target half.
struct DatasetSplit {
  std::vector<LabeledExample> target_half;
  std::vector<LabeledExample> substitute_half;
};

// JSON-lines dataset: one object per line with "text" and "label" fields.
inline std::vector<RawExample> load_raw_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(cat("cannot open dataset file: ", path.string()));
  std::vector<RawExample> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(cat("malformed JSON at ", path.string(), ":", line_no, ": ", e.what()));
    }
    if (!j.contains("text") || !j["text"].is_string()) {
      throw std::runtime_error(cat("missing \"text\" field at ", path.string(), ":", line_no));
    }
    if (!j.contains("label") || !j["label"].is_number_integer()) {
      throw std::runtime_error(cat("missing \"label\" field at ", path.string(), ":", line_no));
    }
    int label = j["label"].get<int>();
    if (label < 0) {
      throw std::runtime_error(cat("negative label at ", path.string(), ":", line_no));
    }
    out.push_back({j["text"].get<std::string>(), label});
  }
  if (out.empty()) throw std::runtime_error(cat("empty dataset: ", path.string()));
  return out;
}

inline void save_raw_dataset(const std::filesystem::path& path, const std::vector<RawExample>& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(cat("cannot write dataset file: ", path.string()));
  for (const auto& ex : data) {
    nlohmann::json j{{"text", ex.text}, {"label", ex.label}};
    out << j.dump() << "\n";
  }
}

// Tokenizes raw records against a fixed vocabulary. num_classes bounds the
// labels; an unseen label in held-out data is an error, not a new class.
inline std::vector<LabeledExample> encode_dataset(const std::vector<RawExample>& raw,
                                                  const Vocabulary& vocab, int num_classes) {
  std::vector<LabeledExample> out;
  out.reserve(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    if (raw[i].label >= num_classes) {
      throw std::runtime_error(
          cat("unknown label ", raw[i].label, " at example ", i + 1, " (have ", num_classes, " classes)"));
    }
    LabeledExample ex;
    ex.raw_text = raw[i].text;
    ex.label = raw[i].label;
    ex.sequence = tokenize(raw[i].text, vocab);
    out.push_back(std::move(ex));
  }
  return out;
}

inline int count_classes(const std::vector<RawExample>& raw) {
  int c = 0;
  for (const auto& ex : raw) c = std::max(c, ex.label + 1);
  return c;
}

// Deterministic stratified 50/50 split. Within each class the order is
// shuffled by the seed; odd class remainders alternate sides so the overall
// size difference never exceeds one.
inline DatasetSplit split_for_substitute(const std::vector<LabeledExample>& data, uint64_t seed) {
  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < data.size(); ++i) by_class[data[i].label].push_back(i);
  for (const auto& [label, idx] : by_class) {
    if (idx.size() < 2) {
      throw std::runtime_error(cat("class ", label, " has a single example; cannot split"));
    }
  }
  Rng rng(seed);
  DatasetSplit split;
  bool extra_to_target = true;
  for (auto& [label, idx] : by_class) {
    rng.shuffle(idx);
    size_t half = idx.size() / 2;
    size_t target_n = half;
    if (idx.size() % 2 == 1) {
      if (extra_to_target) target_n += 1;
      extra_to_target = !extra_to_target;
    }
    for (size_t i = 0; i < idx.size(); ++i) {
      (i < target_n ? split.target_half : split.substitute_half).push_back(data[idx[i]]);
    }
  }
  return split;
}

// Synthetic classification task with a known decision rule: each class owns a
// disjoint set of marker words, fillers are shared across classes and drawn
// from a skewed distribution. A sentence contains 1-3 markers of its own
// class and no foreign markers, so marker lookup classifies perfectly.
inline std::vector<RawExample> generate_synthetic(int n, int vocab_size, int num_classes,
                                                  uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("generate_synthetic: need at least 2 classes");
  if (vocab_size < 2 * num_classes) {
    throw std::invalid_argument("generate_synthetic: vocab_size must be at least 2 * num_classes");
  }
  int markers_per_class = std::max(1, vocab_size / (5 * num_classes));
  int filler_count = vocab_size - markers_per_class * num_classes;

  std::vector<std::vector<std::string>> markers(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    for (int j = 0; j < markers_per_class; ++j) markers[c].push_back(cat("k", c, "m", j));
  }
  std::vector<std::string> fillers;
  for (int i = 0; i < filler_count; ++i) fillers.push_back(cat("w", i));

  // Skewed filler frequencies: p(i) proportional to 1/(i+1).
  std::vector<double> cdf(fillers.size());
  double total = 0.0;
  for (size_t i = 0; i < fillers.size(); ++i) {
    total += 1.0 / static_cast<double>(i + 1);
    cdf[i] = total;
  }

  Rng rng(seed);
  auto draw_filler = [&]() -> const std::string& {
    double u = rng.uniform() * total;
    size_t lo = 0, hi = cdf.size() - 1;
    while (lo < hi) {
      size_t mid = (lo + hi) / 2;
      if (cdf[mid] < u) lo = mid + 1; else hi = mid;
    }
    return fillers[lo];
  };

  std::vector<RawExample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int label = i % num_classes;
    int len = rng.uniform_int(5, 20);
    int marker_count = std::min(rng.uniform_int(1, 3), len);
    std::vector<std::string> words(static_cast<size_t>(len));
    for (auto& w : words) w = draw_filler();
    std::vector<int> positions(static_cast<size_t>(len));
    for (int p = 0; p < len; ++p) positions[static_cast<size_t>(p)] = p;
    rng.shuffle(positions);
    for (int m = 0; m < marker_count; ++m) {
      words[static_cast<size_t>(positions[static_cast<size_t>(m)])] =
          markers[label][static_cast<size_t>(rng.index(markers[label].size()))];
    }
    std::string text;
    for (size_t w = 0; w < words.size(); ++w) {
      if (w) text.push_back(' ');
      text += words[w];
    }
    out.push_back({std::move(text), label});
  }
  return out;
}

// The generator's Bayes-optimal rule: the class whose marker words appear.
// Returns -1 when no marker is present.
inline int synthetic_marker_label(const std::string& text) {
  for (const auto& w : split_words(normalize_text(text))) {
    if (w.size() >= 3 && w[0] == 'k') {
      size_t m = w.find('m');
      if (m != std::string::npos && m > 1) {
        return std::stoi(w.substr(1, m - 1));
      }
    }
  }
  return -1;
}

}  // namespace dilma
