#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace mesde {

/// SplitMix64 step. Advances `state` and returns the mixed output.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Hashes a sequence of 64-bit words into one stream key. Distinct key tuples
/// give statistically independent generators.
constexpr std::uint64_t stream_key(std::initializer_list<std::uint64_t> words) noexcept {
  std::uint64_t state = 0x6a09e667f3bcc909ull;
  std::uint64_t acc = 0;
  for (std::uint64_t w : words) {
    state ^= w + 0x9e3779b97f4a7c15ull + (state << 6) + (state >> 2);
    acc = splitmix64(state);
  }
  return acc;
}

/// xoshiro256++ engine. Satisfies UniformRandomBitGenerator.
class Xoshiro256pp {
public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t seed) noexcept {
    std::uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> s_{};
};

/// Random stream with the variates the simulator needs. The normal sampler is
/// the Marsaglia polar method implemented here so that draws are identical
/// across standard libraries.
class Rng {
public:
  explicit Rng(std::uint64_t seed) noexcept : engine_(seed) {}

  /// Independent stream addressed by a key tuple, e.g. (seed, replication, individual).
  static Rng stream(std::initializer_list<std::uint64_t> key) noexcept {
    return Rng(stream_key(key));
  }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  double exponential() noexcept { return -std::log(uniform()); }

  std::uint64_t bits() noexcept { return engine_(); }

  Xoshiro256pp& engine() noexcept { return engine_; }

private:
  Xoshiro256pp engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace mesde
