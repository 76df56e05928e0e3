#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace overtrain {

// splitmix64 finalizer; used only to mix seeds, never as a sample stream.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Order-sensitive hash of a parent seed and a coordinate tuple.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = mix_seed(parent);
  for (std::uint64_t c : coords) h = mix_seed(h ^ mix_seed(c));
  return h;
}

/// Generator for stream `index` of run `seed`.
inline std::mt19937_64 stream_engine(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace overtrain
