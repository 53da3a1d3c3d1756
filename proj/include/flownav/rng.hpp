#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace flownav {

// splitmix64 finalizer; used both as a counter-based hash and for deriving
// independent stream seeds from (master seed, tags...).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = mix64(master);
  for (auto t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

/// Uniform double in [0, 1) that is a pure function of (key, counter).
inline double counter_uniform(std::uint64_t key, std::uint64_t counter) {
  const std::uint64_t bits = mix64(mix64(key) ^ mix64(counter ^ 0xd1b54a32d192ed03ULL));
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Stream ids used with derive_seed so every consumer gets its own generator.
enum class Stream : std::uint64_t {
  Turbulence = 1,
  Imu = 2,
  Adcp = 3,
  ParticleInit = 4,
  Filter = 5,
  Heading = 6,
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace flownav
