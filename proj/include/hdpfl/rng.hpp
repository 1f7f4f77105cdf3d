#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hdpfl {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Derives an independent stream seed from (root seed, tag, a, b).
// Strategy code never perturbs client streams: clients draw from
// derive_seed(seed, "client", id, round), the server phase from
// derive_seed(seed, "server", round).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = detail::splitmix64(seed ^ detail::fnv1a(tag));
  h = detail::splitmix64(h ^ detail::splitmix64(a));
  h = detail::splitmix64(h ^ detail::splitmix64(b + 0x517cc1b727220a95ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::string_view tag,
                    std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(derive_seed(seed, tag, a, b));
}

}  // namespace hdpfl
