#ifndef AIRLAB_RNG_HPP_
#define AIRLAB_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace airlab {

// Deterministic RNG with self-contained distributions so that seeded runs
// reproduce bit-identically regardless of the standard library in use
// (std::uniform_int_distribution and friends are implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed), base_seed_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(engine_() % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent stream derived from this seed, for per-example or
  // per-epoch use without perturbing the parent sequence.
  static uint64_t mix(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  Rng fork(uint64_t stream) const { return Rng(mix(base_seed_, stream)); }

 private:
  std::mt19937_64 engine_;
  uint64_t base_seed_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace airlab

#endif  // AIRLAB_RNG_HPP_
