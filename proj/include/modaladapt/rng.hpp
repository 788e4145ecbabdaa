#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace modaladapt {

// splitmix64 finalizer; used to derive independent stream seeds from a
// master seed so that per-utterance / per-epoch streams never overlap.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a over bytes.
inline std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index = 0) {
  return mix64(master ^ mix64(hash_str(tag)) ^ mix64(index + 0x51ed270b0a5f3c12ULL));
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view tag,
                                std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(master, tag, index));
}

}  // namespace modaladapt
