#include "srnr/rng.hpp"

#include <cmath>
#include <numbers>

namespace srnr::rng {

double normal(std::uint64_t seed, std::uint64_t counter) noexcept {
  // u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform(seed, 2 * counter);
  const double u2 = uniform(seed, 2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Stream::below(std::uint64_t n) noexcept {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r = next_bits();
  while (r >= limit) r = next_bits();
  return r % n;
}

}  // namespace srnr::rng
