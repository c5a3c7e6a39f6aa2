#pragma once
// Dataset generation: unique (concept, property, related) triplets and
// random traversal sequences over BFS-bounded subgraphs.

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kgmem/graph.hpp"
#include "kgmem/rng.hpp"

namespace kgmem {

struct Triplet {
  std::string subject, property, related;
  bool operator==(const Triplet& o) const {
    return subject == o.subject && property == o.property && related == o.related;
  }
};

struct TripletSet {
  std::vector<Triplet> items;
  uint64_t seed = 0;
};

// One triplet per (concept, property) pair with at least one target; when a
// pair has several targets one is chosen uniformly. Output order is a
// seed-deterministic shuffle; `limit` keeps a uniform random subset.
inline TripletSet gen_triplets(const KnowledgeGraph& g, uint64_t seed,
                               std::optional<int64_t> limit = std::nullopt) {
  Rng rng = make_stream(seed, Stream::triplets);
  TripletSet out;
  out.seed = seed;
  const auto& edges = g.edges();
  size_t i = 0;
  while (i < edges.size()) {
    size_t j = i;
    while (j < edges.size() && edges[j].src == edges[i].src && edges[j].prop == edges[i].prop) ++j;
    // edges[i..j) share (concept, property); targets are sorted by label.
    size_t pick = i + static_cast<size_t>(rng.below(j - i));
    out.items.push_back({g.node_label(edges[pick].src), g.prop_label(edges[pick].prop),
                         g.node_label(edges[pick].dst)});
    i = j;
  }
  if (limit && *limit > static_cast<int64_t>(out.items.size()))
    throw std::runtime_error("gen_triplets: requested " + std::to_string(*limit) +
                             " triplets but only " + std::to_string(out.items.size()) +
                             " (concept, property) pairs are available");
  rng.shuffle(out.items);
  if (limit) out.items.resize(static_cast<size_t>(*limit));
  return out;
}

struct Sequence {
  // node, edge, node, ..., node (alternating labels, odd length)
  std::vector<std::string> elements;
  int node_count() const { return static_cast<int>((elements.size() + 1) / 2); }
  bool operator==(const Sequence& o) const { return elements == o.elements; }
};

struct SequenceGenParams {
  int64_t count = 0;
  int min_nodes = 4;
  int max_nodes = 6;
  int64_t bfs_depth = 5;
  uint64_t seed = 0;

  void validate() const {
    if (count < 0) throw std::invalid_argument("gen_sequences: count must be >= 0");
    if (min_nodes < 2) throw std::invalid_argument("gen_sequences: min_nodes must be >= 2");
    if (max_nodes < min_nodes) throw std::invalid_argument("gen_sequences: max_nodes < min_nodes");
    if (bfs_depth < 1) throw std::invalid_argument("gen_sequences: bfs_depth must be >= 1");
  }
};

// Random traversal of a BFS-bounded subgraph. Each step picks uniformly
// among outgoing (edge, next-node) options whose (current node, edge) pair
// is still unvisited; the walk stops at a per-sequence edge limit drawn
// uniformly from [min_nodes-1, max_nodes-1] or when no option remains.
// Walks shorter than min_nodes nodes are discarded and retried on the same
// per-slot RNG stream, so output is identical whether slots are generated
// serially or in parallel.
inline std::vector<Sequence> gen_sequences(const ExtendedGraph& g, const SequenceGenParams& p) {
  p.validate();
  if (g.nodes().empty()) throw std::runtime_error("gen_sequences: empty graph");
  constexpr int kMaxAttemptsPerSlot = 1000;
  std::vector<Sequence> out;
  out.reserve(static_cast<size_t>(p.count));
  std::vector<std::pair<uint32_t, uint32_t>> visited;  // (node, property)
  std::vector<const ExtendedGraph::Edge*> options;
  std::vector<uint32_t> walk_nodes;
  std::vector<uint32_t> walk_props;
  for (int64_t slot = 0; slot < p.count; ++slot) {
    Rng rng = make_stream(p.seed, Stream::sequences, static_cast<uint64_t>(slot));
    bool emitted = false;
    for (int attempt = 0; attempt < kMaxAttemptsPerSlot && !emitted; ++attempt) {
      uint32_t start = static_cast<uint32_t>(rng.below(g.nodes().size()));
      int64_t edge_limit = rng.uniform_int(p.min_nodes - 1, p.max_nodes - 1);
      std::vector<uint8_t> member = detail::bfs_reach(g, start, p.bfs_depth);
      visited.clear();
      walk_nodes.assign(1, start);
      walk_props.clear();
      uint32_t cur = start;
      while (static_cast<int64_t>(walk_props.size()) < edge_limit) {
        options.clear();
        auto [begin, end] = g.out_edges(cur);
        for (const auto* e = begin; e != end; ++e) {
          if (!member[e->dst]) continue;
          bool seen = false;
          for (const auto& [vn, vp] : visited)
            if (vn == cur && vp == e->prop) { seen = true; break; }
          if (!seen) options.push_back(e);
        }
        if (options.empty()) break;
        const auto* e = options[rng.below(options.size())];
        visited.emplace_back(cur, e->prop);
        walk_props.push_back(e->prop);
        walk_nodes.push_back(e->dst);
        cur = e->dst;
      }
      if (static_cast<int>(walk_nodes.size()) < p.min_nodes) continue;
      Sequence seq;
      seq.elements.reserve(walk_nodes.size() * 2 - 1);
      for (size_t k = 0; k < walk_nodes.size(); ++k) {
        if (k > 0) seq.elements.push_back(g.prop_label(walk_props[k - 1]));
        seq.elements.push_back(g.node_label(walk_nodes[k]));
      }
      out.push_back(std::move(seq));
      emitted = true;
    }
    if (!emitted)
      throw std::runtime_error("gen_sequences: graph too sparse, no sequence of >= " +
                               std::to_string(p.min_nodes) + " nodes found within " +
                               std::to_string(kMaxAttemptsPerSlot) + " attempts");
  }
  return out;
}

struct DatasetStats {
  int64_t count = 0;
  int64_t distinct_labels = 0;
  int64_t total_predictions = 0;                 // triplets: 1/sample; sequences: nodes-1
  std::map<int, int64_t> node_count_histogram;   // sequence node counts (triplets: {2: count})
  int64_t duplicate_samples = 0;                 // verbatim repeats; datasets are not deduplicated

  std::string to_json() const {
    std::ostringstream os;
    os << "{\"count\":" << count << ",\"distinct_labels\":" << distinct_labels
       << ",\"total_predictions\":" << total_predictions << ",\"duplicate_samples\":"
       << duplicate_samples << ",\"node_count_histogram\":{";
    bool first = true;
    for (const auto& [k, v] : node_count_histogram) {
      if (!first) os << ",";
      os << "\"" << k << "\":" << v;
      first = false;
    }
    os << "}}";
    return os.str();
  }
};

inline DatasetStats dataset_stats(const TripletSet& ts) {
  DatasetStats s;
  s.count = static_cast<int64_t>(ts.items.size());
  std::set<std::string> labels;
  std::map<std::string, int64_t> seen;
  for (const auto& t : ts.items) {
    labels.insert(t.subject);
    labels.insert(t.property);
    labels.insert(t.related);
    ++seen[t.subject + "\t" + t.property + "\t" + t.related];
  }
  s.distinct_labels = static_cast<int64_t>(labels.size());
  s.total_predictions = s.count;
  if (s.count > 0) s.node_count_histogram[2] = s.count;
  for (const auto& [k, n] : seen) s.duplicate_samples += n - 1;
  return s;
}

inline DatasetStats dataset_stats(const std::vector<Sequence>& ss) {
  DatasetStats s;
  s.count = static_cast<int64_t>(ss.size());
  std::set<std::string> labels;
  std::map<std::string, int64_t> seen;
  for (const auto& seq : ss) {
    std::string key;
    for (const auto& el : seq.elements) {
      labels.insert(el);
      key += el;
      key += '\t';
    }
    ++seen[key];
    s.total_predictions += seq.node_count() - 1;
    ++s.node_count_histogram[seq.node_count()];
  }
  s.distinct_labels = static_cast<int64_t>(labels.size());
  for (const auto& [k, n] : seen) s.duplicate_samples += n - 1;
  return s;
}

// --- dataset dump/parse: one sample per line, tab-separated labels ---

inline std::string dump_triplets(const TripletSet& ts) {
  std::string out;
  for (const auto& t : ts.items) {
    out += t.subject;
    out += '\t';
    out += t.property;
    out += '\t';
    out += t.related;
    out += '\n';
  }
  return out;
}

inline TripletSet parse_triplets(const std::string& text) {
  TripletSet ts;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw std::runtime_error("triplet parse error at line " + std::to_string(line_no));
    ts.items.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
  }
  return ts;
}

inline std::string dump_sequences(const std::vector<Sequence>& ss) {
  std::string out;
  for (const auto& seq : ss) {
    for (size_t i = 0; i < seq.elements.size(); ++i) {
      if (i > 0) out += '\t';
      out += seq.elements[i];
    }
    out += '\n';
  }
  return out;
}

inline std::vector<Sequence> parse_sequences(const std::string& text) {
  std::vector<Sequence> out;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Sequence seq;
    size_t pos = 0;
    while (true) {
      size_t tab = line.find('\t', pos);
      if (tab == std::string::npos) {
        seq.elements.push_back(line.substr(pos));
        break;
      }
      seq.elements.push_back(line.substr(pos, tab - pos));
      pos = tab + 1;
    }
    if (seq.elements.size() % 2 == 0)
      throw std::runtime_error("sequence parse error at line " + std::to_string(line_no) +
                               ": even element count");
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace kgmem
