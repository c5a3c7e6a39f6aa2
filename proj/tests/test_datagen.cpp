#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <string>
#include <vector>

#include "kgmem/datagen.hpp"
#include "kgmem/tokenizer.hpp"

using namespace kgmem;

namespace {

// Independent validity checker used by both unit and acceptance tests:
// alternation, edge membership, (node, edge) visit uniqueness, node-count
// bounds. Walks raw labels against the extended graph's edge list only.
bool check_sequence(const ExtendedGraph& g, const Sequence& seq, int min_nodes, int max_nodes,
                    std::string* why = nullptr) {
  const auto& el = seq.elements;
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (el.empty() || el.size() % 2 == 0) return fail("even or empty element list");
  const int n_nodes = static_cast<int>(el.size() + 1) / 2;
  if (n_nodes < min_nodes || n_nodes > max_nodes) return fail("node count out of bounds");
  std::set<std::string> edge_set;
  for (const auto& e : g.edges())
    edge_set.insert(g.node_label(e.src) + "\x1f" + g.prop_label(e.prop) + "\x1f" +
                    g.node_label(e.dst));
  std::set<std::pair<std::string, std::string>> visited;
  for (size_t i = 0; i + 2 < el.size(); i += 2) {
    if (!edge_set.count(el[i] + "\x1f" + el[i + 1] + "\x1f" + el[i + 2]))
      return fail("triple not an edge of the graph");
    if (!visited.insert({el[i], el[i + 1]}).second) return fail("(node, edge) pair revisited");
  }
  for (size_t i = 0; i < el.size(); i += 2)
    if (!g.node_id(el[i])) return fail("unknown node label");
  return true;
}

}  // namespace

TEST_CASE("gen_triplets on a single-edge graph") {
  KnowledgeGraph g = load_edge_list("a\tp\tb\n");
  TripletSet ts = gen_triplets(g, 0);
  REQUIRE(ts.items.size() == 1);
  CHECK(ts.items[0] == Triplet{"a", "p", "b"});
}

TEST_CASE("gen_triplets picks targets uniformly across seeds") {
  KnowledgeGraph g = load_edge_list("a\tp\tb\na\tp\tc\n");
  int picked_b = 0;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    TripletSet ts = gen_triplets(g, seed);
    REQUIRE(ts.items.size() == 1);
    REQUIRE((ts.items[0].related == "b" || ts.items[0].related == "c"));
    if (ts.items[0].related == "b") ++picked_b;
  }
  const double freq = picked_b / 1000.0;
  CHECK(freq > 0.45);
  CHECK(freq < 0.55);
}

TEST_CASE("gen_triplets keys are exactly the (concept, property) pairs") {
  // 30 pairs: 10 nodes x 3 properties, some with several targets
  std::string text;
  for (int i = 0; i < 10; ++i)
    for (int p = 0; p < 3; ++p)
      for (int t = 0; t < 1 + (i + p) % 2; ++t)
        text += "n" + std::to_string(i) + "\tq" + std::to_string(p) + "\tn" +
                std::to_string((i + t + 1) % 10) + "\n";
  KnowledgeGraph g = load_edge_list(text);
  std::set<std::pair<std::string, std::string>> expect;
  for (const auto& e : g.labeled_edges()) expect.insert({e.source, e.property});
  REQUIRE(expect.size() == 30);

  TripletSet ts = gen_triplets(g, 4, 30);
  std::set<std::pair<std::string, std::string>> got;
  for (const auto& t : ts.items) got.insert({t.subject, t.property});
  CHECK(got == expect);
  CHECK(ts.items.size() == 30);
}

TEST_CASE("gen_triplets limit errors state availability") {
  KnowledgeGraph g = load_edge_list("a\tp\tb\n");
  CHECK_THROWS_WITH(gen_triplets(g, 0, 5), Catch::Matchers::ContainsSubstring("only 1"));
}

TEST_CASE("gen_triplets is deterministic and shuffles by seed") {
  KnowledgeGraph g = synth_kg({50, 5, 2.0, 3});
  TripletSet a = gen_triplets(g, 9), b = gen_triplets(g, 9), c = gen_triplets(g, 10);
  CHECK(a.items == b.items);
  CHECK(a.items != c.items);  // same keys, different target picks/order
}

TEST_CASE("gen_sequences emits valid sequences on a chain") {
  ExtendedGraph x = extend_bidirectional(
      load_edge_list("a\tp\tb\nb\tp\tc\nc\tp\td\nd\tp\te\n"));
  SequenceGenParams params;
  params.count = 50;
  params.seed = 21;
  std::vector<Sequence> ss = gen_sequences(x, params);
  REQUIRE(ss.size() == 50);
  std::string why;
  for (const auto& seq : ss) {
    INFO(why);
    CHECK(check_sequence(x, seq, 4, 6, &why));
  }
}

TEST_CASE("two-node graphs cannot reach four nodes") {
  ExtendedGraph x = extend_bidirectional(load_edge_list("a\tp\tb\n"));
  // (a,p) and (b,p_rev) are exhausted after one bounce; max walk is 3 nodes
  SequenceGenParams relaxed;
  relaxed.count = 20;
  relaxed.min_nodes = 2;
  relaxed.max_nodes = 6;
  relaxed.seed = 5;
  for (const auto& seq : gen_sequences(x, relaxed)) CHECK(seq.node_count() <= 3);

  SequenceGenParams strict;
  strict.count = 1;
  strict.min_nodes = 4;
  strict.max_nodes = 6;
  strict.seed = 5;
  CHECK_THROWS_WITH(gen_sequences(x, strict), Catch::Matchers::ContainsSubstring("too sparse"));
}

TEST_CASE("gen_sequences is deterministic") {
  ExtendedGraph x = extend_bidirectional(synth_kg({60, 6, 3.0, 8}));
  SequenceGenParams params;
  params.count = 40;
  params.seed = 77;
  CHECK(gen_sequences(x, params) == gen_sequences(x, params));
  params.seed = 78;
  CHECK(!(gen_sequences(x, params) == [&] {
    SequenceGenParams p2 = params;
    p2.seed = 77;
    return gen_sequences(x, p2);
  }()));
}

TEST_CASE("sequence node counts respect the drawn edge limits") {
  ExtendedGraph x = extend_bidirectional(synth_kg({80, 8, 3.0, 15}));
  SequenceGenParams params;
  params.count = 200;
  params.seed = 3;
  for (const auto& seq : gen_sequences(x, params)) {
    CHECK(seq.node_count() >= 4);
    CHECK(seq.node_count() <= 6);
  }
}

TEST_CASE("dataset_stats on an empty set is all zero") {
  DatasetStats s = dataset_stats(std::vector<Sequence>{});
  CHECK(s.count == 0);
  CHECK(s.distinct_labels == 0);
  CHECK(s.total_predictions == 0);
  CHECK(s.node_count_histogram.empty());
  CHECK(s.duplicate_samples == 0);
}

TEST_CASE("dataset_stats histogram counts node lengths") {
  std::vector<Sequence> ss{{{"a", "p", "b", "p", "c", "p", "d"}},
                           {{"a", "p", "b", "p", "c", "p", "d", "p", "e"}},
                           {{"a", "p", "b", "p", "c", "p", "d", "p", "e", "p", "f"}}};
  DatasetStats s = dataset_stats(ss);
  CHECK(s.count == 3);
  CHECK(s.node_count_histogram == std::map<int, int64_t>{{4, 1}, {5, 1}, {6, 1}});
  CHECK(s.total_predictions == 3 + 4 + 5);
}

TEST_CASE("dataset_stats prediction total matches tokenizer masks") {
  ExtendedGraph x = extend_bidirectional(synth_kg({120, 10, 3.0, 2}));
  SequenceGenParams params;
  params.count = 1000;
  params.seed = 11;
  std::vector<Sequence> ss = gen_sequences(x, params);
  DatasetStats s = dataset_stats(ss);
  Vocab v = build_vocab(ss);
  EncodedBatch b = encode_sequences(ss, v, 11);
  CHECK(s.total_predictions == b.n_predictions());
}

TEST_CASE("triplet dump/parse round-trips") {
  KnowledgeGraph g = synth_kg({40, 4, 2.0, 6});
  TripletSet ts = gen_triplets(g, 2);
  TripletSet back = parse_triplets(dump_triplets(ts));
  CHECK(back.items == ts.items);
}

TEST_CASE("sequence dump/parse round-trips") {
  ExtendedGraph x = extend_bidirectional(synth_kg({60, 6, 3.0, 4}));
  SequenceGenParams params;
  params.count = 30;
  params.seed = 9;
  std::vector<Sequence> ss = gen_sequences(x, params);
  CHECK(parse_sequences(dump_sequences(ss)) == ss);
}

TEST_CASE("per-slot sequence streams never share RNG state") {
  // each sequence slot draws from its own derived stream, so retries in one
  // slot can never replay another slot's draws
  std::set<uint64_t> first_draws;
  for (uint64_t slot = 0; slot < 1000; ++slot) {
    Rng rng = make_stream(99, Stream::sequences, slot);
    first_draws.insert(rng.next_u64());
  }
  CHECK(first_draws.size() == 1000);
}

TEST_CASE("duplicate sequences are counted, not removed") {
  std::vector<Sequence> ss{{{"a", "p", "b", "p", "c", "p", "d"}},
                           {{"a", "p", "b", "p", "c", "p", "d"}}};
  DatasetStats s = dataset_stats(ss);
  CHECK(s.count == 2);
  CHECK(s.duplicate_samples == 1);
}
