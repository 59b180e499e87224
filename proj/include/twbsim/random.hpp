#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace twbsim {

/// One SplitMix64 step. Used for seeding and for deriving substream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// xoshiro256++ bit generator. Satisfies UniformRandomBitGenerator, so it can
/// drive the <random> distributions. Cheap to construct, which matters here:
/// every (shot, arm, chain) tuple gets its own stream so that results do not
/// depend on scheduling or worker count.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
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

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
};

/// Deterministically derives a substream seed from a master seed and an index
/// path (e.g. {purpose, scan_point, shot, arm}). Different paths give
/// statistically independent streams.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = master ^ 0x6a09e667f3bcc909ULL;
  for (std::uint64_t x : path) {
    h ^= x + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    std::uint64_t s = h;
    h = splitmix64(s);
  }
  return h;
}

inline RandomStream substream(std::uint64_t master,
                              std::initializer_list<std::uint64_t> path) {
  return RandomStream(derive_seed(master, path));
}

/// Stream purpose tags, the first element of every derivation path.
namespace streams {
inline constexpr std::uint64_t kSource = 1;     ///< twin-beam photon number
inline constexpr std::uint64_t kDetector = 2;   ///< per-arm detection physics
inline constexpr std::uint64_t kChain = 3;      ///< per-chain readout noise
inline constexpr std::uint64_t kBootstrap = 4;  ///< resampling
}  // namespace streams

}  // namespace twbsim
