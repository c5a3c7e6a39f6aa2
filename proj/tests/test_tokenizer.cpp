#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "kgmem/datagen.hpp"
#include "kgmem/tokenizer.hpp"

using namespace kgmem;

TEST_CASE("build_vocab assigns ids in first-appearance order") {
  TripletSet ts;
  ts.items = {{"a", "p", "b"}};
  Vocab v = build_vocab(ts);
  CHECK(v.id("a") == 1);
  CHECK(v.id("p") == 2);
  CHECK(v.id("b") == 3);
  CHECK(v.size() == 3);
  CHECK(Vocab::pad_id == 0);
}

TEST_CASE("repeated labels get a single id") {
  TripletSet ts;
  for (int i = 0; i < 10; ++i) ts.items.push_back({"x" + std::to_string(i), "p", "b"});
  Vocab v = build_vocab(ts);
  CHECK(v.size() == 12);  // 10 subjects + p + b
  CHECK(v.id("b") == 3);
}

TEST_CASE("vocab bijection holds in both directions") {
  ExtendedGraph x = extend_bidirectional(synth_kg({50, 5, 3.0, 4}));
  SequenceGenParams params;
  params.count = 200;
  params.seed = 5;
  std::vector<Sequence> ss = gen_sequences(x, params);
  Vocab v = build_vocab(ss);
  for (int32_t id = 1; id <= v.size(); ++id) CHECK(v.id(v.label(id)) == id);
}

TEST_CASE("encode_triplets produces 3-wide rows with a single target") {
  TripletSet ts;
  ts.items = {{"a", "p", "b"}, {"a", "q", "c"}};
  Vocab v = build_vocab(ts);
  EncodedBatch b = encode_triplets(ts, v);
  CHECK(b.tokens.rows == 2);
  CHECK(b.tokens.cols == 3);
  CHECK(b.tokens(0, 0) == 1);
  CHECK(b.tokens(0, 1) == 2);
  CHECK(b.tokens(0, 2) == 3);
  for (int r = 0; r < 2; ++r) {
    CHECK(b.target_mask(r, 0) == 0);
    CHECK(b.target_mask(r, 1) == 0);
    CHECK(b.target_mask(r, 2) == 1);
    CHECK(b.node_mask(r, 0) == 1);
    CHECK(b.node_mask(r, 1) == 0);
    CHECK(b.node_mask(r, 2) == 1);
  }
  CHECK(b.n_predictions() == 2);
}

TEST_CASE("encode_triplets rejects unknown labels by name") {
  TripletSet ts;
  ts.items = {{"a", "p", "b"}};
  Vocab v = build_vocab(ts);
  ts.items.push_back({"a", "p", "mystery"});
  CHECK_THROWS_WITH(encode_triplets(ts, v), Catch::Matchers::ContainsSubstring("mystery"));
}

TEST_CASE("encoded triplets decode back to the originals") {
  KnowledgeGraph g = synth_kg({40, 4, 2.5, 8});
  TripletSet ts = gen_triplets(g, 3);
  Vocab v = build_vocab(ts);
  EncodedBatch b = encode_triplets(ts, v);
  for (int r = 0; r < b.tokens.rows; ++r) {
    auto labels = decode_row(b, r, v);
    REQUIRE(labels.size() == 3);
    CHECK(labels[0] == ts.items[static_cast<size_t>(r)].subject);
    CHECK(labels[1] == ts.items[static_cast<size_t>(r)].property);
    CHECK(labels[2] == ts.items[static_cast<size_t>(r)].related);
  }
}

TEST_CASE("encode_sequences pads to max_len and masks node positions") {
  std::vector<Sequence> ss{{{"a", "p", "b", "p", "c", "p", "d"}}};  // 4 nodes, 7 tokens
  Vocab v = build_vocab(ss);
  EncodedBatch b = encode_sequences(ss, v, 11);
  CHECK(b.tokens.cols == 11);
  CHECK(b.lengths[0] == 7);
  for (int t = 7; t < 11; ++t) {
    CHECK(b.tokens(0, t) == Vocab::pad_id);
    CHECK(b.node_mask(0, t) == 0);
    CHECK(b.target_mask(0, t) == 0);
  }
  for (int t = 0; t < 7; ++t) {
    CHECK(b.node_mask(0, t) == (t % 2 == 0 ? 1 : 0));
    CHECK(b.target_mask(0, t) == ((t % 2 == 0 && t > 0) ? 1 : 0));
  }
  CHECK(b.n_predictions() == 3);
}

TEST_CASE("a six-node sequence is scored at positions 2,4,6,8,10") {
  std::vector<Sequence> ss{
      {{"a", "p", "b", "p", "c", "p", "d", "p", "e", "p", "f"}}};  // 6 nodes, 11 tokens
  Vocab v = build_vocab(ss);
  EncodedBatch b = encode_sequences(ss, v, 11);
  std::vector<int> scored;
  for (int t = 0; t < 11; ++t)
    if (b.target_mask(0, t)) scored.push_back(t);
  CHECK(scored == std::vector<int>{2, 4, 6, 8, 10});
}

TEST_CASE("sequence longer than max_len is an error") {
  std::vector<Sequence> ss{{{"a", "p", "b", "p", "c"}}};
  Vocab v = build_vocab(ss);
  CHECK_THROWS(encode_sequences(ss, v, 3));
}

TEST_CASE("prediction count of a 20k sequence dataset lands in the 4..6-node band") {
  ExtendedGraph x = extend_bidirectional(synth_kg({300, 12, 3.0, 19}));
  SequenceGenParams params;
  params.count = 20000;
  params.seed = 23;
  std::vector<Sequence> ss = gen_sequences(x, params);
  Vocab v = build_vocab(ss);
  EncodedBatch b = encode_sequences(ss, v, 11);
  // 3..5 scored nodes per sequence
  CHECK(b.n_predictions() >= 60000);
  CHECK(b.n_predictions() <= 100000);
}

TEST_CASE("decode strips pads and validates ids") {
  TripletSet ts;
  ts.items = {{"a", "p", "b"}};
  Vocab v = build_vocab(ts);
  std::vector<int32_t> row{1, 2, 3, 0, 0};
  CHECK(decode(row, v) == std::vector<std::string>{"a", "p", "b"});
  std::vector<int32_t> pads{0, 0, 0};
  CHECK(decode(pads, v).empty());
  std::vector<int32_t> bad{1, 9};
  CHECK_THROWS(decode(bad, v));
}

TEST_CASE("decode of encode is the identity on generated sequences") {
  ExtendedGraph x = extend_bidirectional(synth_kg({80, 8, 3.0, 3}));
  SequenceGenParams params;
  params.count = 300;
  params.seed = 31;
  std::vector<Sequence> ss = gen_sequences(x, params);
  Vocab v = build_vocab(ss);
  EncodedBatch b = encode_sequences(ss, v, 11);
  for (int r = 0; r < b.tokens.rows; ++r)
    CHECK(decode_row(b, r, v) == ss[static_cast<size_t>(r)].elements);
}

TEST_CASE("target mask is contained in the node mask and avoids pads") {
  ExtendedGraph x = extend_bidirectional(synth_kg({60, 6, 3.0, 12}));
  SequenceGenParams params;
  params.count = 100;
  params.seed = 41;
  std::vector<Sequence> ss = gen_sequences(x, params);
  Vocab v = build_vocab(ss);
  EncodedBatch b = encode_sequences(ss, v, 11);
  for (int r = 0; r < b.tokens.rows; ++r) {
    int64_t preds = 0;
    for (int t = 0; t < b.tokens.cols; ++t) {
      if (b.target_mask(r, t)) CHECK(b.node_mask(r, t));
      if (b.node_mask(r, t)) CHECK(b.tokens(r, t) != Vocab::pad_id);
      preds += b.target_mask(r, t);
    }
    CHECK(preds == ss[static_cast<size_t>(r)].node_count() - 1);
  }
}

TEST_CASE("vocab dump/reload reproduces the bijection") {
  KnowledgeGraph g = synth_kg({30, 3, 2.0, 2});
  TripletSet ts = gen_triplets(g, 1);
  Vocab v = build_vocab(ts);
  Vocab back = parse_vocab(dump_vocab(v));
  CHECK(back == v);
}
