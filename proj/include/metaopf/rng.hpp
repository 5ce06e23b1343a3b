#pragma once

// Counter-style random streams: every (seed, purpose, a, b) tuple maps to its own engine, so
// results never depend on the order in which streams are consumed.

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <vector>

namespace metaopf {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

enum class Stream : std::uint64_t { topology = 1, load = 2, init = 3, meta = 4, bank = 5, scratch = 6 };

class Rng {
 public:
  explicit Rng(std::uint64_t key) : eng_(key) {}
  Rng(std::uint64_t seed, Stream s, std::uint64_t a = 0, std::uint64_t b = 0)
      : eng_(stream_key({seed, static_cast<std::uint64_t>(s), a, b})) {}

  /// Uniform on [0, 1) with 53 random bits; identical across standard libraries.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do r = eng_();
    while (r >= limit);
    return r % n;
  }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[below(static_cast<std::uint64_t>(i) + 1)]);
    return p;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace metaopf
