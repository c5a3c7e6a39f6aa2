#pragma once
// Deterministic RNG utilities. All randomness in the library flows through
// Rng (xoshiro256**) seeded via splitmix64 mixing, so results are
// reproducible across platforms and standard-library versions.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kgmem {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Chained seed derivation: mix(seed, a, b, c) is a pure function used to
// carve independent streams out of one master seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t s = seed;
  uint64_t out = splitmix64(s);
  s ^= a + 0x9e3779b97f4a7c15ULL;
  out ^= splitmix64(s);
  s ^= b + 0xc2b2ae3d27d4eb4fULL;
  out ^= splitmix64(s);
  s ^= c + 0x165667b19e3779f9ULL;
  out ^= splitmix64(s);
  return out;
}

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stream tags keep unrelated draws from sharing a generator state.
enum class Stream : uint64_t {
  synth = 1,
  triplets = 2,
  sequences = 3,
  init = 4,
  shuffle = 5,
  rrelu = 6,
  dataset = 7,
  run = 8,
};

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    ++count_;
    return result;
  }

  // Unbiased integer in [0, n). Rejection sampling; independent of
  // std::uniform_int_distribution implementation details.
  uint64_t below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be > 0");
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
    if (lo > hi) throw std::invalid_argument("Rng::uniform_int: empty range");
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo) + 1));
  }

  double real01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform_real(double lo, double hi) { return lo + (hi - lo) * real01(); }

  // Knuth's method; fine for the small means used by graph synthesis.
  int poisson(double mean) {
    const double limit = std::exp(-mean);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= real01();
    } while (p > limit);
    return k - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  uint64_t draw_count() const { return count_; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t state_[4];
  uint64_t count_ = 0;
};

inline Rng make_stream(uint64_t seed, Stream tag, uint64_t a = 0, uint64_t b = 0) {
  return Rng(mix_seed(seed, static_cast<uint64_t>(tag), a, b));
}

}  // namespace kgmem
