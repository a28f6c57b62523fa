#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace gearnet {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic child seed from a base seed and a path of salts.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> salts) {
  std::uint64_t h = mix64(base);
  for (std::uint64_t s : salts) h = mix64(h ^ mix64(s + 0x632be59bd9b4e019ULL));
  return h;
}

}  // namespace gearnet
