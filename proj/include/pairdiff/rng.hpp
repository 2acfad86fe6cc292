#pragma once

#include <cstdint>
#include <vector>

namespace pairdiff {

/// Counter-based deterministic RNG. A stream is (key, counter); the key is
/// derived from a user seed plus a chain of stream ids, so independent parts
/// of a run can draw without coordinating. The value at (seed, ids..., index)
/// never depends on what other streams drew in between.
class RngStream {
 public:
  RngStream() : key_(mix(0x9e3779b97f4a7c15ull)), counter_(0) {}
  explicit RngStream(uint64_t seed) : key_(mix(seed ^ 0xd1b54a32d192ed03ull)), counter_(0) {}

  /// Child stream for an independent purpose. Children with distinct ids are
  /// decorrelated from each other and from the parent.
  RngStream derive(uint64_t stream_id) const {
    RngStream child;
    child.key_ = mix(key_ ^ mix(stream_id ^ 0x2545f4914f6cdd1dull));
    child.counter_ = 0;
    return child;
  }

  uint64_t next_u64() { return mix(key_ ^ (0xbf58476d1ce4e5b9ull * ++counter_)); }

  /// Uniform in [0, 1), 53-bit mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Lemire's multiply-shift; n must be positive.
  uint64_t uniform_int(uint64_t n) {
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
    uint64_t lo = static_cast<uint64_t>(m);
    if (lo < n) {
      uint64_t threshold = (0 - n) % n;
      while (lo < threshold) {
        m = static_cast<__uint128_t>(next_u64()) * n;
        lo = static_cast<uint64_t>(m);
      }
    }
    return static_cast<uint64_t>(m >> 64);
  }

  /// Standard normal via Box-Muller (cosine branch; consumes two counters so
  /// scalar and paired fills stay aligned on draw index).
  double normal();

  /// Fill with iid standard normals using full Box-Muller pairs.
  void fill_normal(float* dst, size_t n);
  void fill_normal(std::vector<float>& dst) { fill_normal(dst.data(), dst.size()); }

  void fill_uniform(float* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(uniform());
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  uint64_t counter() const { return counter_; }

 private:
  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t key_;
  uint64_t counter_;
};

}  // namespace pairdiff
