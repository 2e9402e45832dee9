#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace graf {

// Named draw sites; each gets an independent stream derived from the master seed.
enum class Stream : std::uint64_t {
  kPose = 1,
  kPattern = 2,
  kLatent = 3,
  kStrata = 4,
  kData = 5,
  kInit = 6,
  kScene = 7,
  kVerify = 8,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

  // Counter-keyed substream: same (seed, stream, keys) always yields the same sequence.
  static Rng substream(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> keys = {}) {
    std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream)));
    for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
    return Rng(h);
  }

  // Uniform in [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return lo == hi ? lo : lo + (hi - lo) * uniform(); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::uint64_t next() { return engine_(); }
  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace graf
