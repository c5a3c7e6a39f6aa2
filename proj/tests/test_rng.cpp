#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "kgmem/rng.hpp"

using namespace kgmem;

TEST_CASE("rng is deterministic per seed") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const uint64_t x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
    all_equal = all_equal && (x == y);
    any_diff = any_diff || (x != z);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("below stays in range and covers small ranges") {
  Rng rng(7);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 5000; ++i) {
    const uint64_t v = rng.below(5);
    REQUIRE(v < 5);
    ++hits[static_cast<size_t>(v)];
  }
  for (int h : hits) CHECK(h > 800);  // ~1000 each
}

TEST_CASE("uniform_int is inclusive on both ends") {
  Rng rng(1);
  bool lo_seen = false, hi_seen = false;
  for (int i = 0; i < 2000; ++i) {
    const int64_t v = rng.uniform_int(3, 5);
    REQUIRE(v >= 3);
    REQUIRE(v <= 5);
    lo_seen = lo_seen || v == 3;
    hi_seen = hi_seen || v == 5;
  }
  CHECK(lo_seen);
  CHECK(hi_seen);
}

TEST_CASE("shuffle permutes") {
  Rng rng(9);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<size_t>(i)] = i;
  auto orig = v;
  rng.shuffle(v);
  CHECK(v != orig);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == orig);
}

TEST_CASE("stream derivation separates tags") {
  Rng a = make_stream(5, Stream::shuffle, 1);
  Rng b = make_stream(5, Stream::rrelu, 1);
  Rng c = make_stream(5, Stream::shuffle, 2);
  const uint64_t x = a.next_u64();
  CHECK(x != b.next_u64());
  CHECK(x != c.next_u64());
  Rng a2 = make_stream(5, Stream::shuffle, 1);
  CHECK(a2.next_u64() == x);
}

TEST_CASE("poisson mean is roughly right") {
  Rng rng(11);
  double sum = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) sum += rng.poisson(2.0);
  CHECK(sum / n == Catch::Approx(2.0).margin(0.05));
}
