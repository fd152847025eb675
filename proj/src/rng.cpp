#include "kolmo/rng.hpp"

#include <cmath>

namespace kolmo {

namespace {

constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> c, std::array<std::uint32_t, 2> k) {
  for (int r = 0; r < 10; ++r) {
    if (r > 0) k[0] += kW0, k[1] += kW1;
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kM0, c[0], hi0, lo0);
    mulhilo(kM1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
  return c;
}

double to_unit(std::uint32_t hi, std::uint32_t lo) {
  std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 21) ^ (lo >> 11);
  return (static_cast<double>(bits & ((1ull << 53) - 1)) + 0.5) * 0x1.0p-53;
}

void gaussians(std::uint64_t seed, std::uint32_t path, std::uint32_t step, int count, double* out) {
  const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  for (int b = 0; 2 * b < count; ++b) {
    auto w = philox4x32_10({step, path, static_cast<std::uint32_t>(b), 0u}, key);
    double u1 = to_unit(w[0], w[1]), u2 = to_unit(w[2], w[3]);
    double r = std::sqrt(-2.0 * std::log(u1));
    out[2 * b] = r * std::cos(2.0 * M_PI * u2);
    if (2 * b + 1 < count) out[2 * b + 1] = r * std::sin(2.0 * M_PI * u2);
  }
}

}  // namespace kolmo
