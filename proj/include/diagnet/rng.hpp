#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace diagnet {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for a (seed, stream...) tuple. Used wherever work is
/// split per sample / per tree so results never depend on iteration order.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  std::uint64_t h = splitmix64(seed);
  for (auto s : stream) h = splitmix64(h ^ splitmix64(s + 0x632be59bd9b4e019ULL));
  return Rng(h);
}

// Stream tags, kept distinct so derived generators never collide.
namespace stream {
inline constexpr std::uint64_t kClient = 1;
inline constexpr std::uint64_t kNominal = 2;
inline constexpr std::uint64_t kScenario = 3;
inline constexpr std::uint64_t kSplit = 4;
inline constexpr std::uint64_t kInit = 5;
inline constexpr std::uint64_t kShuffle = 6;
inline constexpr std::uint64_t kTree = 7;
inline constexpr std::uint64_t kBootstrap = 8;
inline constexpr std::uint64_t kTies = 9;
inline constexpr std::uint64_t kSubset = 10;
inline constexpr std::uint64_t kValidation = 11;
}  // namespace stream

}  // namespace diagnet
