#include "storylab/rng.hpp"

#include <cstdio>

namespace storylab {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                          std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = splitmix64(seed ^ fnv1a64(stream));
  for (std::uint64_t c : coords) h = splitmix64(h ^ splitmix64(c));
  return h;
}

Rng make_rng(std::uint64_t seed, std::string_view stream,
             std::initializer_list<std::uint64_t> coords) {
  return Rng(derive_seed(seed, stream, coords));
}

}  // namespace storylab
