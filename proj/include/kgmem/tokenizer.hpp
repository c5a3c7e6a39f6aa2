#pragma once
// Label <-> token-id vocabulary and fixed-shape dataset encoding.
//
// Id 0 is reserved for padding; real ids are assigned 1..V in first
// appearance order. Node masks mark node positions, target masks the node
// positions that are scored (every node except a sample's first).

#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgmem/datagen.hpp"
#include "kgmem/grid.hpp"

namespace kgmem {

struct Vocab {
  static constexpr int32_t pad_id = 0;

  std::vector<std::string> id_to_label{""};  // index 0 is the pad sentinel
  std::unordered_map<std::string, int32_t> label_to_id;

  int32_t size() const { return static_cast<int32_t>(id_to_label.size()) - 1; }

  int32_t add(const std::string& label) {
    auto it = label_to_id.find(label);
    if (it != label_to_id.end()) return it->second;
    int32_t id = static_cast<int32_t>(id_to_label.size());
    id_to_label.push_back(label);
    label_to_id.emplace(label, id);
    return id;
  }

  int32_t id(const std::string& label) const {
    auto it = label_to_id.find(label);
    if (it == label_to_id.end())
      throw std::runtime_error("vocab: unknown label '" + label + "'");
    return it->second;
  }

  const std::string& label(int32_t id) const {
    if (id < 0 || id >= static_cast<int32_t>(id_to_label.size()))
      throw std::runtime_error("vocab: id " + std::to_string(id) + " out of range (V=" +
                               std::to_string(size()) + ")");
    return id_to_label[static_cast<size_t>(id)];
  }

  bool operator==(const Vocab& o) const { return id_to_label == o.id_to_label; }
};

inline Vocab build_vocab(const TripletSet& ts) {
  if (ts.items.empty()) throw std::invalid_argument("build_vocab: empty dataset");
  Vocab v;
  for (const auto& t : ts.items) {
    v.add(t.subject);
    v.add(t.property);
    v.add(t.related);
  }
  return v;
}

inline Vocab build_vocab(const std::vector<Sequence>& ss) {
  if (ss.empty()) throw std::invalid_argument("build_vocab: empty dataset");
  Vocab v;
  for (const auto& seq : ss)
    for (const auto& el : seq.elements) v.add(el);
  return v;
}

struct EncodedBatch {
  Grid<int32_t> tokens;
  Grid<uint8_t> node_mask;    // node positions eligible for scoring
  Grid<uint8_t> target_mask;  // node positions actually scored (excludes position 0)
  std::vector<int32_t> lengths;

  int64_t n_predictions() const {
    int64_t n = 0;
    for (uint8_t m : target_mask.data) n += m;
    return n;
  }
};

// Rows [concept, property, related]; the related concept is the single
// scored position.
inline EncodedBatch encode_triplets(const TripletSet& ts, const Vocab& v) {
  EncodedBatch b;
  const int n = static_cast<int>(ts.items.size());
  b.tokens = Grid<int32_t>(n, 3);
  b.node_mask = Grid<uint8_t>(n, 3);
  b.target_mask = Grid<uint8_t>(n, 3);
  b.lengths.assign(static_cast<size_t>(n), 3);
  for (int r = 0; r < n; ++r) {
    const auto& t = ts.items[static_cast<size_t>(r)];
    b.tokens(r, 0) = v.id(t.subject);
    b.tokens(r, 1) = v.id(t.property);
    b.tokens(r, 2) = v.id(t.related);
    b.node_mask(r, 0) = 1;
    b.node_mask(r, 2) = 1;
    b.target_mask(r, 2) = 1;
  }
  return b;
}

// Zero-pad to max_len; nodes sit at even unpadded indices.
inline EncodedBatch encode_sequences(const std::vector<Sequence>& ss, const Vocab& v, int max_len) {
  EncodedBatch b;
  const int n = static_cast<int>(ss.size());
  b.tokens = Grid<int32_t>(n, max_len);
  b.node_mask = Grid<uint8_t>(n, max_len);
  b.target_mask = Grid<uint8_t>(n, max_len);
  b.lengths.resize(static_cast<size_t>(n));
  for (int r = 0; r < n; ++r) {
    const auto& seq = ss[static_cast<size_t>(r)];
    const int len = static_cast<int>(seq.elements.size());
    if (len > max_len)
      throw std::runtime_error("encode_sequences: sequence of " + std::to_string(len) +
                               " tokens exceeds max_len " + std::to_string(max_len));
    b.lengths[static_cast<size_t>(r)] = len;
    for (int t = 0; t < len; ++t) {
      b.tokens(r, t) = v.id(seq.elements[static_cast<size_t>(t)]);
      if (t % 2 == 0) {
        b.node_mask(r, t) = 1;
        if (t > 0) b.target_mask(r, t) = 1;
      }
    }
  }
  return b;
}

// Pads stripped, remaining ids mapped back to labels.
inline std::vector<std::string> decode(std::span<const int32_t> row, const Vocab& v) {
  std::vector<std::string> out;
  for (int32_t id : row) {
    if (id == Vocab::pad_id) continue;
    out.push_back(v.label(id));
  }
  return out;
}

inline std::vector<std::string> decode_row(const EncodedBatch& b, int row, const Vocab& v) {
  return decode(std::span<const int32_t>(b.tokens.row_ptr(row), static_cast<size_t>(b.tokens.cols)), v);
}

// --- vocab dump/reload: "id<TAB>label" sorted by id ---

inline std::string dump_vocab(const Vocab& v) {
  std::string out;
  for (int32_t id = 1; id <= v.size(); ++id) {
    out += std::to_string(id);
    out += '\t';
    out += v.id_to_label[static_cast<size_t>(id)];
    out += '\n';
  }
  return out;
}

inline Vocab parse_vocab(const std::string& text) {
  Vocab v;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("vocab parse error at line " + std::to_string(line_no));
    int32_t id = static_cast<int32_t>(std::stol(line.substr(0, tab)));
    if (id != v.size() + 1)
      throw std::runtime_error("vocab parse error at line " + std::to_string(line_no) +
                               ": ids must be contiguous from 1");
    v.add(line.substr(tab + 1));
  }
  return v;
}

}  // namespace kgmem
