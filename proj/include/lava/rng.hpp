#pragma once

#include <cmath>
#include <cstdint>

namespace lava {

// splitmix64 step; also used to expand seeds into engine state
constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from (root, component, index).
/// Adding a component does not shift the streams of existing ones.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t component,
                                 std::uint64_t index = 0) {
  std::uint64_t s = root;
  std::uint64_t a = splitmix64(s);
  s = a ^ (component * 0x9e3779b97f4a7c15ULL);
  std::uint64_t b = splitmix64(s);
  s = b ^ (index * 0xd1b54a32d192ed03ULL);
  return splitmix64(s);
}

// Stream components. Fixed ids keep seed derivation stable across versions.
namespace seed_component {
constexpr std::uint64_t model_init = 1;
constexpr std::uint64_t tasks = 2;
constexpr std::uint64_t eval_tasks = 3;
constexpr std::uint64_t noise = 4;
constexpr std::uint64_t probe = 5;
}  // namespace seed_component

/// xoshiro256++ with bit-exact uniform/normal generation. The standard
/// library distributions are implementation-defined, which would break the
/// bitwise reproducibility the run manifests promise.
class Rng {
public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) word = splitmix64(s);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal (Box-Muller, cached spare).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lava
