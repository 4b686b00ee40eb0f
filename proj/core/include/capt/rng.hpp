#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace capt {

using Rng = std::mt19937_64;

// Independent stream keyed by (seed, a, b).
Rng derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

double uniform01(Rng& rng);
std::size_t uniform_index(Rng& rng, std::size_t n);  // [0, n)

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

}  // namespace capt
