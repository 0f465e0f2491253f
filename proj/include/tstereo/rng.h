#pragma once

#include <cstdint>
#include <initializer_list>

namespace tstereo {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Order-sensitive mix of a seed with any number of integer keys. Used to
// derive independent, replayable streams (per object, per view, per touch).
template <typename... Keys>
std::uint64_t mix_seed(std::uint64_t seed, Keys... keys) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t k : {static_cast<std::uint64_t>(keys)...})
    h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

}  // namespace tstereo
