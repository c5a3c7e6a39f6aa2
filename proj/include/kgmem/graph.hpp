#pragma once
// Knowledge-graph storage and traversal primitives.
//
// KnowledgeGraph  - labeled nodes, typed directed edges (deduplicated).
// ExtendedGraph   - standardized labels plus one reverse edge per forward
//                   edge, for bidirectional traversal.
//
// Labels are interned into sorted tables, so edge ids sort exactly like
// their labels and every iteration order is deterministic.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kgmem/rng.hpp"

namespace kgmem {

inline constexpr const char* kReverseMarker = "_rev";

struct LabeledEdge {
  std::string source, property, target;
  bool operator==(const LabeledEdge& o) const {
    return source == o.source && property == o.property && target == o.target;
  }
  bool operator<(const LabeledEdge& o) const {
    return std::tie(source, property, target) < std::tie(o.source, o.property, o.target);
  }
};

// Lowercase ASCII letters; collapse whitespace runs to single underscores.
// Non-ASCII bytes pass through untouched.
inline std::string standardize_label(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool pending_sep = false;
  for (unsigned char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      if (!out.empty()) pending_sep = true;
      continue;
    }
    if (pending_sep) {
      out.push_back('_');
      pending_sep = false;
    }
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    out.push_back(static_cast<char>(c));
  }
  return out;
}

namespace detail {

inline uint32_t index_of(const std::vector<std::string>& sorted, const std::string& label) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), label);
  return static_cast<uint32_t>(it - sorted.begin());
}

inline std::optional<uint32_t> find_in(const std::vector<std::string>& sorted,
                                       const std::string& label) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), label);
  if (it == sorted.end() || *it != label) return std::nullopt;
  return static_cast<uint32_t>(it - sorted.begin());
}

}  // namespace detail

class KnowledgeGraph {
 public:
  struct Edge {
    uint32_t src, prop, dst;
    bool operator==(const Edge& o) const {
      return src == o.src && prop == o.prop && dst == o.dst;
    }
    bool operator<(const Edge& o) const {
      return std::tie(src, prop, dst) < std::tie(o.src, o.prop, o.dst);
    }
  };

  KnowledgeGraph() = default;

  static KnowledgeGraph from_edges(const std::vector<LabeledEdge>& raw) {
    KnowledgeGraph g;
    std::set<std::string> nodes, props;
    for (const auto& e : raw) {
      nodes.insert(e.source);
      nodes.insert(e.target);
      props.insert(e.property);
    }
    g.nodes_.assign(nodes.begin(), nodes.end());
    g.props_.assign(props.begin(), props.end());
    std::set<Edge> edges;
    for (const auto& e : raw) {
      edges.insert(Edge{detail::index_of(g.nodes_, e.source),
                        detail::index_of(g.props_, e.property),
                        detail::index_of(g.nodes_, e.target)});
    }
    g.edges_.assign(edges.begin(), edges.end());
    return g;
  }

  const std::vector<std::string>& nodes() const { return nodes_; }
  const std::vector<std::string>& properties() const { return props_; }
  const std::vector<Edge>& edges() const { return edges_; }

  const std::string& node_label(uint32_t id) const { return nodes_[id]; }
  const std::string& prop_label(uint32_t id) const { return props_[id]; }
  std::optional<uint32_t> node_id(const std::string& label) const {
    return detail::find_in(nodes_, label);
  }

  std::vector<LabeledEdge> labeled_edges() const {
    std::vector<LabeledEdge> out;
    out.reserve(edges_.size());
    for (const auto& e : edges_)
      out.push_back({nodes_[e.src], props_[e.prop], nodes_[e.dst]});
    return out;
  }

  bool operator==(const KnowledgeGraph& o) const {
    return nodes_ == o.nodes_ && props_ == o.props_ && edges_ == o.edges_;
  }

 private:
  std::vector<std::string> nodes_;   // sorted
  std::vector<std::string> props_;   // sorted
  std::vector<Edge> edges_;          // sorted by (src, prop, dst)
};

// Parse UTF-8 TSV triples: "source<TAB>property<TAB>target" per line.
// '#'-prefixed and blank lines are skipped; duplicates are deduplicated.
inline KnowledgeGraph load_edge_list(const std::string& text) {
  std::vector<LabeledEdge> edges;
  size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') {
      if (pos > text.size()) break;
      continue;
    }
    std::vector<std::string> fields;
    size_t f = 0;
    while (true) {
      size_t tab = line.find('\t', f);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(f));
        break;
      }
      fields.push_back(line.substr(f, tab - f));
      f = tab + 1;
    }
    if (fields.size() != 3)
      throw std::runtime_error("edge list parse error at line " + std::to_string(line_no) +
                               ": expected 3 tab-separated fields, got " +
                               std::to_string(fields.size()));
    for (const auto& field : fields)
      if (field.empty())
        throw std::runtime_error("edge list parse error at line " + std::to_string(line_no) +
                                 ": empty field");
    edges.push_back({fields[0], fields[1], fields[2]});
    if (pos > text.size()) break;
  }
  return KnowledgeGraph::from_edges(edges);
}

inline KnowledgeGraph load_edge_list_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open graph file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_edge_list(ss.str());
}

// One property label per line; blank and '#' lines ignored.
inline std::set<std::string> load_banned_list_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open banned-property file: " + path);
  std::set<std::string> banned;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    banned.insert(line);
  }
  return banned;
}

// TSV dump: "source<TAB>property<TAB>target" per line, sorted.
inline std::string dump_edge_list(const KnowledgeGraph& g) {
  std::string out;
  for (const auto& e : g.edges()) {
    out += g.node_label(e.src);
    out += '\t';
    out += g.prop_label(e.prop);
    out += '\t';
    out += g.node_label(e.dst);
    out += '\n';
  }
  return out;
}

// Keep only edges whose property is not banned; nodes without a remaining
// incident edge are dropped.
inline KnowledgeGraph filter_properties(const KnowledgeGraph& g,
                                        const std::set<std::string>& banned) {
  std::vector<LabeledEdge> kept;
  for (const auto& e : g.edges()) {
    if (banned.count(g.prop_label(e.prop))) continue;
    kept.push_back({g.node_label(e.src), g.prop_label(e.prop), g.node_label(e.dst)});
  }
  return KnowledgeGraph::from_edges(kept);
}

class ExtendedGraph {
 public:
  struct Edge {
    uint32_t src, prop, dst;
    bool reverse;
    bool operator<(const Edge& o) const {
      return std::tie(src, prop, dst) < std::tie(o.src, o.prop, o.dst);
    }
    bool operator==(const Edge& o) const {
      return src == o.src && prop == o.prop && dst == o.dst && reverse == o.reverse;
    }
  };

  ExtendedGraph() = default;

  // nodes may exceed edge endpoints (a BFS at depth 0 keeps its start node).
  static ExtendedGraph from_parts(const std::vector<std::string>& node_labels,
                                  const std::vector<std::pair<LabeledEdge, bool>>& raw) {
    ExtendedGraph g;
    std::set<std::string> nodes(node_labels.begin(), node_labels.end());
    std::set<std::string> props;
    for (const auto& [e, rev] : raw) {
      nodes.insert(e.source);
      nodes.insert(e.target);
      props.insert(e.property);
    }
    g.nodes_.assign(nodes.begin(), nodes.end());
    g.props_.assign(props.begin(), props.end());
    std::map<std::tuple<uint32_t, uint32_t, uint32_t>, bool> edges;
    for (const auto& [e, rev] : raw) {
      edges.emplace(std::make_tuple(detail::index_of(g.nodes_, e.source),
                                    detail::index_of(g.props_, e.property),
                                    detail::index_of(g.nodes_, e.target)),
                    rev);
    }
    g.edges_.reserve(edges.size());
    for (const auto& [key, rev] : edges)
      g.edges_.push_back(Edge{std::get<0>(key), std::get<1>(key), std::get<2>(key), rev});
    g.build_adjacency();
    return g;
  }

  const std::vector<std::string>& nodes() const { return nodes_; }
  const std::vector<std::string>& properties() const { return props_; }
  const std::vector<Edge>& edges() const { return edges_; }

  const std::string& node_label(uint32_t id) const { return nodes_[id]; }
  const std::string& prop_label(uint32_t id) const { return props_[id]; }
  std::optional<uint32_t> node_id(const std::string& label) const {
    return detail::find_in(nodes_, label);
  }

  // Outgoing edges of a node, sorted by (property label, target label).
  std::pair<const Edge*, const Edge*> out_edges(uint32_t node) const {
    return {edges_.data() + adj_offsets_[node], edges_.data() + adj_offsets_[node + 1]};
  }

  bool operator==(const ExtendedGraph& o) const {
    return nodes_ == o.nodes_ && props_ == o.props_ && edges_ == o.edges_;
  }

 private:
  void build_adjacency() {
    // edges_ is sorted by (src, prop, dst), so per-node ranges are contiguous.
    adj_offsets_.assign(nodes_.size() + 1, 0);
    for (const auto& e : edges_) ++adj_offsets_[e.src + 1];
    for (size_t i = 1; i < adj_offsets_.size(); ++i) adj_offsets_[i] += adj_offsets_[i - 1];
  }

  std::vector<std::string> nodes_;
  std::vector<std::string> props_;
  std::vector<Edge> edges_;
  std::vector<uint32_t> adj_offsets_;
};

// Standardize labels, then add one reverse edge (target, prop + "_rev",
// source) per forward edge.
inline ExtendedGraph extend_bidirectional(const KnowledgeGraph& g) {
  const std::string marker = kReverseMarker;
  for (const auto& p : g.properties()) {
    const std::string std_p = standardize_label(p);
    if (std_p.size() >= marker.size() &&
        std_p.compare(std_p.size() - marker.size(), marker.size(), marker) == 0)
      throw std::runtime_error("reverse-marker collision: property '" + p +
                               "' already ends with '" + marker + "'");
  }
  std::vector<std::pair<LabeledEdge, bool>> raw;
  raw.reserve(g.edges().size() * 2);
  for (const auto& e : g.edges()) {
    LabeledEdge fwd{standardize_label(g.node_label(e.src)), standardize_label(g.prop_label(e.prop)),
                    standardize_label(g.node_label(e.dst))};
    LabeledEdge rev{fwd.target, fwd.property + marker, fwd.source};
    raw.emplace_back(std::move(fwd), false);
    raw.emplace_back(std::move(rev), true);
  }
  std::vector<std::string> node_labels;
  node_labels.reserve(g.nodes().size());
  for (const auto& n : g.nodes()) node_labels.push_back(standardize_label(n));
  return ExtendedGraph::from_parts(node_labels, raw);
}

struct SynthGraphParams {
  int64_t n_nodes = 0;
  int64_t n_properties = 0;
  double mean_out_degree = 0.0;
  uint64_t seed = 0;

  void validate() const {
    if (n_nodes < 2) throw std::invalid_argument("synth_kg: n_nodes must be >= 2");
    if (n_properties < 1) throw std::invalid_argument("synth_kg: n_properties must be >= 1");
    if (!(mean_out_degree > 0)) throw std::invalid_argument("synth_kg: mean_out_degree must be > 0");
  }
};

namespace detail {

inline std::string padded_label(char prefix, int64_t idx, int64_t count) {
  int width = 1;
  for (int64_t v = count - 1; v >= 10; v /= 10) ++width;
  std::string digits = std::to_string(idx);
  std::string out(1, prefix);
  out.append(static_cast<size_t>(width) - digits.size(), '0');
  out += digits;
  return out;
}

}  // namespace detail

// Random graph with ~n_nodes * mean_out_degree edges. Out-degrees are
// 1 + Poisson(mean - 1), so every node keeps at least one outgoing edge
// while the mean stays at mean_out_degree.
inline KnowledgeGraph synth_kg(const SynthGraphParams& params) {
  params.validate();
  Rng rng = make_stream(params.seed, Stream::synth);
  const int64_t n = params.n_nodes;
  std::vector<LabeledEdge> edges;
  edges.reserve(static_cast<size_t>(static_cast<double>(n) * params.mean_out_degree) + 16);
  for (int64_t i = 0; i < n; ++i) {
    int degree = params.mean_out_degree >= 1.0 ? 1 + rng.poisson(params.mean_out_degree - 1.0) : 1;
    for (int d = 0; d < degree; ++d) {
      int64_t target = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - 1)));
      if (target >= i) ++target;  // no self-loops
      int64_t prop = static_cast<int64_t>(rng.below(static_cast<uint64_t>(params.n_properties)));
      edges.push_back({detail::padded_label('n', i, n), detail::padded_label('p', prop, params.n_properties),
                       detail::padded_label('n', target, n)});
    }
  }
  return KnowledgeGraph::from_edges(edges);
}

// (property, target) pairs of a node, sorted.
inline std::vector<std::pair<std::string, std::string>> neighbors(const ExtendedGraph& g,
                                                                  const std::string& node) {
  auto id = g.node_id(node);
  if (!id) throw std::runtime_error("neighbors: unknown node '" + node + "'");
  auto [begin, end] = g.out_edges(*id);
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(static_cast<size_t>(end - begin));
  for (const auto* e = begin; e != end; ++e)
    out.emplace_back(g.prop_label(e->prop), g.node_label(e->dst));
  return out;
}

namespace detail {

// BFS membership within `depth` hops following outgoing edges.
inline std::vector<uint8_t> bfs_reach(const ExtendedGraph& g, uint32_t start, int64_t depth) {
  std::vector<uint8_t> member(g.nodes().size(), 0);
  member[start] = 1;
  std::vector<uint32_t> frontier{start}, next;
  for (int64_t hop = 0; hop < depth && !frontier.empty(); ++hop) {
    next.clear();
    for (uint32_t u : frontier) {
      auto [begin, end] = g.out_edges(u);
      for (const auto* e = begin; e != end; ++e) {
        if (!member[e->dst]) {
          member[e->dst] = 1;
          next.push_back(e->dst);
        }
      }
    }
    frontier.swap(next);
  }
  return member;
}

}  // namespace detail

// Induced subgraph on the nodes reachable from start within `depth` hops.
inline ExtendedGraph bfs_subgraph(const ExtendedGraph& g, const std::string& start, int64_t depth) {
  auto id = g.node_id(start);
  if (!id) throw std::runtime_error("bfs_subgraph: unknown start node '" + start + "'");
  if (depth < 0) throw std::invalid_argument("bfs_subgraph: depth must be >= 0");
  std::vector<uint8_t> member = detail::bfs_reach(g, *id, depth);
  std::vector<std::string> node_labels;
  for (size_t i = 0; i < member.size(); ++i)
    if (member[i]) node_labels.push_back(g.node_label(static_cast<uint32_t>(i)));
  std::vector<std::pair<LabeledEdge, bool>> raw;
  for (const auto& e : g.edges()) {
    if (member[e.src] && member[e.dst])
      raw.emplace_back(LabeledEdge{g.node_label(e.src), g.prop_label(e.prop), g.node_label(e.dst)},
                       e.reverse);
  }
  return ExtendedGraph::from_parts(node_labels, raw);
}

}  // namespace kgmem
