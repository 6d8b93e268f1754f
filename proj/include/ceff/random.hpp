#pragma once

#include <cstdint>
#include <random>

namespace ceff {

// Every random draw in the library comes from std::mt19937_64, whose output
// sequence is fixed by the C++ standard. Variates are produced with
// Boost.Random distributions so that datasets are identical across standard
// library implementations.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent generator for stream `stream` of master seed `seed`. Streams
// are keyed by a fixed id so adding a new stream never shifts another.
inline Rng substream(std::uint64_t seed, std::uint64_t stream) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x5851f42d4c957f2dULL)));
}

// Generator for block `block` of stream `stream`; lets parallel workers draw
// fixed chunks of a long sequence independently of how blocks are scheduled.
inline Rng block_substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t block) {
  return substream(splitmix64(seed) ^ splitmix64(stream ^ 0xa0761d6478bd642fULL), block);
}

namespace streams {
inline constexpr std::uint64_t kConfounder = 1;
inline constexpr std::uint64_t kExposure = 2;
inline constexpr std::uint64_t kOutcome = 3;
inline constexpr std::uint64_t kFolds = 10;
inline constexpr std::uint64_t kOracleZ = 20;
}  // namespace streams

}  // namespace ceff
