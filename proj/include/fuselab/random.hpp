#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string_view>
#include <vector>

namespace fuselab {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of the named stream under `master`. Distinct names give independent
/// streams, so e.g. the word-drop stream never perturbs training noise.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return splitmix64(master ^ splitmix64(h));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

inline Rng make_stream(std::uint64_t master, std::string_view stream) { return Rng(derive_seed(master, stream)); }

/// Engine state as integers (the textual state words of the engine).
inline std::vector<std::uint64_t> rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  std::istringstream is(os.str());
  std::vector<std::uint64_t> words;
  std::uint64_t w;
  while (is >> w) words.push_back(w);
  return words;
}

inline Rng rng_from_state(const std::vector<std::uint64_t>& words) {
  std::ostringstream os;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) os << ' ';
    os << words[i];
  }
  Rng rng;
  std::istringstream is(os.str());
  is >> rng;
  return rng;
}

}  // namespace fuselab
