#pragma once

// Seeded randomness with results that do not depend on the standard library
// vendor: std::mt19937_64 is fully specified, but the std distributions are
// not, so bounded draws and shuffles are implemented here.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace topocal {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed for a named stream, e.g. derive_seed(root, "cycle", 2).
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                                 std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(root);
  for (unsigned char c : stream) h = splitmix64(h ^ c);
  return splitmix64(h ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do x = engine_();
    while (x >= limit);
    return x % bound;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  // `count` distinct indices from [0, population), ascending (Floyd's algorithm).
  std::vector<std::uint64_t> sample_indices(std::uint64_t population, std::uint64_t count) {
    std::vector<std::uint64_t> out;
    if (count >= population) {
      out.resize(population);
      for (std::uint64_t i = 0; i < population; ++i) out[i] = i;
      return out;
    }
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(count * 2);
    for (std::uint64_t j = population - count; j < population; ++j) {
      const std::uint64_t t = below(j + 1);
      if (!chosen.insert(t).second) chosen.insert(j);
    }
    out.assign(chosen.begin(), chosen.end());
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace topocal
