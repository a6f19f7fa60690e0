#pragma once

#include "dilma/common.hpp"
#include "dilma/nn.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace dilma {

// Self-describing binary checkpoint: model kind, string metadata (architecture
// hyperparameters), named parameter groups with tensor shapes and raw doubles,
// plus the vocabulary hash and training seed it was produced with.
struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<nn::ParamGroup> groups;  // vars hold values; gradients not stored
  uint64_t vocab_hash = 0;
  uint64_t seed = 0;

  int meta_int(const std::string& key) const { return std::stoi(meta.at(key)); }
  double meta_double(const std::string& key) const { return std::stod(meta.at(key)); }
};

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline uint32_t get_u32(std::istream& is) {
  uint32_t v;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline uint64_t get_u64(std::istream& is) {
  uint64_t v;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
inline std::string get_str(std::istream& is) {
  uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                            const std::map<std::string, std::string>& meta,
                            const std::vector<nn::ParamGroup>& groups, uint64_t vocab_hash,
                            uint64_t seed) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(cat("cannot write checkpoint: ", path.string()));
  os.write("DILMACK1", 8);
  detail::put_str(os, kind);
  detail::put_u64(os, vocab_hash);
  detail::put_u64(os, seed);
  detail::put_u32(os, static_cast<uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    detail::put_str(os, k);
    detail::put_str(os, v);
  }
  detail::put_u32(os, static_cast<uint32_t>(groups.size()));
  for (const auto& g : groups) {
    detail::put_str(os, g.name);
    detail::put_u32(os, static_cast<uint32_t>(g.params.size()));
    for (const auto& p : g.params) {
      detail::put_str(os, p.name);
      const Mat& m = p.var->value;
      detail::put_u32(os, static_cast<uint32_t>(m.rows()));
      detail::put_u32(os, static_cast<uint32_t>(m.cols()));
      os.write(reinterpret_cast<const char*>(m.data()),
               static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(m.size())));
    }
  }
  if (!os) throw std::runtime_error(cat("write failed: ", path.string()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(cat("cannot open checkpoint: ", path.string()));
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "DILMACK1", 8) != 0) {
    throw std::runtime_error(cat("not a checkpoint file: ", path.string()));
  }
  Checkpoint ck;
  ck.kind = detail::get_str(is);
  ck.vocab_hash = detail::get_u64(is);
  ck.seed = detail::get_u64(is);
  uint32_t meta_n = detail::get_u32(is);
  for (uint32_t i = 0; i < meta_n; ++i) {
    std::string k = detail::get_str(is);
    ck.meta[k] = detail::get_str(is);
  }
  uint32_t group_n = detail::get_u32(is);
  for (uint32_t gi = 0; gi < group_n; ++gi) {
    nn::ParamGroup g;
    g.name = detail::get_str(is);
    uint32_t param_n = detail::get_u32(is);
    for (uint32_t pi = 0; pi < param_n; ++pi) {
      std::string name = detail::get_str(is);
      uint32_t rows = detail::get_u32(is);
      uint32_t cols = detail::get_u32(is);
      Mat m(rows, cols);
      is.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(m.size())));
      g.params.push_back({name, ad::leaf(std::move(m))});
    }
    ck.groups.push_back(std::move(g));
  }
  if (!is) throw std::runtime_error(cat("truncated checkpoint: ", path.string()));
  return ck;
}

// Copies checkpointed values into a live model's groups (matched by order and
// verified by name/shape).
inline void restore_groups(std::vector<nn::ParamGroup>& live, const Checkpoint& ck) {
  if (live.size() != ck.groups.size()) throw std::runtime_error("checkpoint group count mismatch");
  for (size_t g = 0; g < live.size(); ++g) {
    if (live[g].name != ck.groups[g].name || live[g].params.size() != ck.groups[g].params.size()) {
      throw std::runtime_error(cat("checkpoint group mismatch: ", ck.groups[g].name));
    }
    for (size_t p = 0; p < live[g].params.size(); ++p) {
      const Mat& src = ck.groups[g].params[p].var->value;
      Mat& dst = live[g].params[p].var->value;
      if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
        throw std::runtime_error(cat("checkpoint shape mismatch: ", ck.groups[g].params[p].name));
      }
      dst = src;
    }
  }
}

inline uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(cat("cannot hash missing file: ", path.string()));
  uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a(buf, static_cast<size_t>(is.gcount()), h);
  }
  return h;
}

}  // namespace dilma
