#pragma once

// Counter-based random numbers.
//
// Every random draw in the library is addressed by (seed, domain, a, b, c):
// the value depends only on that address, never on how many other draws
// happened before it or on which thread produced it. This is what keeps
// sampling results identical across batch sizes and worker-pool sizes.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace dsl::rng {

// SplitMix64 finalizer; used to derive Philox keys from (seed, domain).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

// Philox4x32 with 10 rounds (Salmon et al., SC'11).
constexpr Counter philox4x32_10(Counter ctr, Key key) noexcept {
  constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
  constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += W0;
      key[1] += W1;
    }
    const std::uint64_t p0 = std::uint64_t{M0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{M1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

// Uniform double in the open interval (0, 1) from 64 random bits. 52 bits
// keep the top value 1 - 2^-53 exactly representable.
constexpr double to_open_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

// Domain tags keep unrelated consumers of one seed on disjoint streams.
enum class Domain : std::uint64_t {
  sampler = 1,
  spa = 2,
  langevin = 3,
  subsample = 4,
  test = 5,
  dataset = 6,
  order = 7,
};

// A keyed stream. Each address (a, b, c) yields one Philox block, i.e. four
// 32-bit words, exposed as two uniforms or two standard normals.
class Stream {
public:
  constexpr Stream(std::uint64_t seed, Domain domain) noexcept
      : Stream(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(domain)))) {}

  constexpr explicit Stream(std::uint64_t key) noexcept
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

  constexpr Counter block(std::uint64_t a, std::uint32_t b, std::uint32_t c) const noexcept {
    return philox4x32_10({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), b, c},
                         key_);
  }

  std::pair<double, double> uniform_pair(std::uint64_t a, std::uint32_t b,
                                         std::uint32_t c) const noexcept {
    const Counter r = block(a, b, c);
    return {to_open_unit((std::uint64_t{r[0]} << 32) | r[1]),
            to_open_unit((std::uint64_t{r[2]} << 32) | r[3])};
  }

  // Box-Muller on one block.
  std::pair<double, double> normal_pair(std::uint64_t a, std::uint32_t b,
                                        std::uint32_t c) const noexcept {
    const auto [u1, u2] = uniform_pair(a, b, c);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(theta), r * std::sin(theta)};
  }

  double normal(std::uint64_t a, std::uint32_t b, std::uint32_t c) const noexcept {
    return normal_pair(a, b, c).first;
  }

  // Substream: a new key derived from this one and an index.
  constexpr Stream split(std::uint64_t index) const noexcept {
    const std::uint64_t k = (std::uint64_t{key_[1]} << 32) | key_[0];
    return Stream(splitmix64(k ^ splitmix64(index + 0x632be59bd9b4e019ULL)));
  }

  constexpr Key key() const noexcept { return key_; }

private:
  Key key_;
};

} // namespace dsl::rng
