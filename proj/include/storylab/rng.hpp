#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>

namespace storylab {

using Rng = std::mt19937_64;

/// Seed for a named substream of the global seed ("init", "shuffle", ...),
/// optionally refined by integer coordinates such as (task, epoch).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                          std::initializer_list<std::uint64_t> coords = {});

Rng make_rng(std::uint64_t seed, std::string_view stream,
             std::initializer_list<std::uint64_t> coords = {});

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace storylab
