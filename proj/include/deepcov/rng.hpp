#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace deepcov {

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a root seed and a path of keys,
/// e.g. stream_seed(seed, {kDropout, epoch, batch, layer}).
constexpr std::uint64_t stream_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(root);
  for (std::uint64_t k : path) s = mix64(s ^ mix64(k + 0x632be59bd9b4e019ULL));
  return s;
}

/// Named sub-stream tags. All randomness in a run derives from one seed.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kFolds = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kLayerNoise = 4;
inline constexpr std::uint64_t kTerrain = 5;
inline constexpr std::uint64_t kSites = 6;
inline constexpr std::uint64_t kTargetNoise = 7;
inline constexpr std::uint64_t kModulation = 8;
inline constexpr std::uint64_t kGradCheck = 9;
}  // namespace streams

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  return Rng(stream_seed(root, path));
}

}  // namespace deepcov
