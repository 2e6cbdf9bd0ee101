#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace bags {

using Rng = std::mt19937_64;

/// Derives an independent stream for a named subsystem from the run seed,
/// so adding draws in one subsystem never shifts another.
Rng make_rng(std::uint64_t seed, std::string_view subsystem);

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& text);

}  // namespace bags
