#pragma once

#include <array>
#include <cstdint>

namespace kolmo {

/// Philox4x32 with 10 rounds (counter-based; Salmon et al. constants).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key);

/// Uniform in (0, 1) from two 32-bit words (53 bits, never 0 or 1).
double to_unit(std::uint32_t hi, std::uint32_t lo);

/// Standard normals for (seed, path, step): `count` values written to out.
/// Each block of four words yields two normals by Box-Muller.
void gaussians(std::uint64_t seed, std::uint32_t path, std::uint32_t step, int count, double* out);

}  // namespace kolmo
