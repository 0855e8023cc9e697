#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dexter/dataset.hpp"
#include "dexter/graph.hpp"

namespace dexter {

// Flat binary checkpoint: a fixed magic, a JSON metadata blob, a layer name
// table with shapes, then the packed little-endian float64 payload in table
// order. Writing is fully deterministic for a given store, so identically
// seeded runs produce byte-identical files.

namespace bin {

inline uint32_t to_le_u32(uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return __builtin_bswap32(v);
}

inline uint64_t to_le_u64(uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return __builtin_bswap64(v);
}

inline void write_u32(std::ostream& out, uint32_t v) {
  uint32_t le = to_le_u32(v);
  out.write(reinterpret_cast<const char*>(&le), 4);
}

inline uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return to_le_u32(v);
}

inline void write_f64(std::ostream& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  bits = to_le_u64(bits);
  out.write(reinterpret_cast<const char*>(&bits), 8);
}

inline double read_f64(std::istream& in) {
  uint64_t bits = 0;
  in.read(reinterpret_cast<char*>(&bits), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated payload");
  bits = to_le_u64(bits);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  uint32_t len = read_u32(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

}  // namespace bin

inline constexpr char kCheckpointMagic[4] = {'D', 'X', 'C', 'P'};

inline void save_checkpoint(std::ostream& out, const ParamStore& ps,
                            const nlohmann::json& meta) {
  out.write(kCheckpointMagic, 4);
  bin::write_u32(out, 1);
  bin::write_string(out, meta.dump());
  bin::write_u32(out, static_cast<uint32_t>(ps.size()));
  for (size_t i = 0; i < ps.size(); ++i) {
    const Param& p = ps.at(i);
    bin::write_string(out, p.name);
    bin::write_u32(out, static_cast<uint32_t>(p.t.shape.size()));
    for (int d : p.t.shape) bin::write_u32(out, static_cast<uint32_t>(d));
  }
  for (size_t i = 0; i < ps.size(); ++i) {
    const Mat& v = ps.at(i).t.values;
    for (int64_t k = 0; k < v.size(); ++k) bin::write_f64(out, v.data()[k]);
  }
}

inline void save_checkpoint(const std::string& path, const ParamStore& ps,
                            const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  save_checkpoint(out, ps, meta);
}

inline nlohmann::json load_checkpoint(std::istream& in, ParamStore& ps) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  uint32_t version = bin::read_u32(in);
  if (version != 1)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  nlohmann::json meta = nlohmann::json::parse(bin::read_string(in));
  uint32_t count = bin::read_u32(in);
  std::vector<std::pair<std::string, std::vector<int>>> table;
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = bin::read_string(in);
    uint32_t rank = bin::read_u32(in);
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(bin::read_u32(in));
    table.emplace_back(std::move(name), std::move(shape));
  }
  for (auto& [name, shape] : table) {
    Param& p = ps.has(name) ? ps.get(name) : ps.create(name, shape);
    if (p.t.shape != shape)
      throw std::runtime_error("checkpoint: shape mismatch for param " + name);
    for (int64_t k = 0; k < p.t.values.size(); ++k)
      p.t.values.data()[k] = bin::read_f64(in);
  }
  return meta;
}

inline nlohmann::json load_checkpoint(const std::string& path, ParamStore& ps) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  return load_checkpoint(in, ps);
}

// Makes an exact value snapshot of every parameter (Adam state excluded);
// used to keep the best-dev model while training continues.
inline std::vector<Mat> snapshot_params(const ParamStore& ps) {
  std::vector<Mat> out;
  out.reserve(ps.size());
  for (size_t i = 0; i < ps.size(); ++i) out.push_back(ps.at(i).t.values);
  return out;
}

inline void restore_params(ParamStore& ps, const std::vector<Mat>& snap) {
  if (snap.size() != ps.size())
    throw std::runtime_error("restore_params: size mismatch");
  for (size_t i = 0; i < ps.size(); ++i) ps.at(i).t.values = snap[i];
}

// Optional pre-trained word vectors: text format, one line per token with
// space-separated floats. Rows of word.emb whose token appears in the file
// are overwritten; everything else keeps its random initialization.
inline int load_word_vectors(const std::string& path, const Vocab& vocab, Param& emb) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open word-vector file: " + path);
  std::string line;
  int loaded = 0;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    auto it = vocab.word_ids.find(token);
    if (it == vocab.word_ids.end()) {
      continue;  // vector for an out-of-vocabulary token
    }
    std::vector<double> vals;
    double v;
    while (ss >> v) vals.push_back(v);
    if (static_cast<int64_t>(vals.size()) != emb.t.values.cols())
      throw std::runtime_error("word-vector line " + std::to_string(line_no) +
                               ": expected " + std::to_string(emb.t.values.cols()) +
                               " values, got " + std::to_string(vals.size()));
    for (size_t c = 0; c < vals.size(); ++c) emb.t.values(it->second, c) = vals[c];
    ++loaded;
  }
  return loaded;
}

}  // namespace dexter
