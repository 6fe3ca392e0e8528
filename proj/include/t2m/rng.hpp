#ifndef T2M_RNG_HPP_
#define T2M_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace t2m {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

// Seeds are derived from (namespace, root seed, index) so that data/train/eval
// streams never collide.
inline uint64_t ns_seed(std::string_view ns, uint64_t seed, uint64_t index = 0) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : ns) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ULL;
  }
  return mix_seed(mix_seed(h, seed), index);
}

// Deterministic stream with explicit draw formulas (no distribution state),
// so results are reproducible across standard library implementations.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : gen_(seed) {}

  uint64_t raw() { return gen_(); }

  // [0, 1)
  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    return static_cast<int>((static_cast<__uint128_t>(gen_()) * n) >> 64);
  }

  // Box-Muller, one value per call.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace t2m

#endif  // T2M_RNG_HPP_
