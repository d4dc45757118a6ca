#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace probekit {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Derives an independent sub-seed from a root seed and a label, so every
/// consumer of randomness gets its own stream from the single user seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label) noexcept;

/// Standard normal truncated to [-2, 2] by rejection, scaled by `stddev`.
double truncated_normal(Rng& rng, double stddev);

}  // namespace probekit
