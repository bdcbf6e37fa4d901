#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace fedtgp {

using Rng = std::mt19937_64;

// Seed for a named substream. Mixing a stable label hash into the run seed
// means adding a new consumer never perturbs the streams of existing ones.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                          std::initializer_list<std::uint64_t> indices = {});

inline Rng make_rng(std::uint64_t seed, std::string_view label, std::initializer_list<std::uint64_t> indices = {}) {
    return Rng(derive_seed(seed, label, indices));
}

}  // namespace fedtgp
