#pragma once

#include <cmath>
#include <cstdint>

namespace rsynth::rng {

// splitmix64 over an explicit counter: stream(seed) yields u64(seed, 0),
// u64(seed, 1), ... independent of call-site state.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t counter_u64(std::uint64_t seed, std::uint64_t counter) {
  return mix64(seed ^ mix64(counter));
}

/// Derives a child stream seed; used for per-run and per-chunk sub-seeds.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(master + 0x632be59bd9b4e019ULL * (index + 1));
}

class Stream {
 public:
  explicit Stream(std::uint64_t seed) : seed_(seed) {}

  double uniform() {  // in (0,1)
    std::uint64_t u = counter_u64(seed_, counter_++);
    return (static_cast<double>(u >> 11) + 0.5) * 0x1.0p-53;
  }

  // Box-Muller; draws are consumed in pairs.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rsynth::rng
