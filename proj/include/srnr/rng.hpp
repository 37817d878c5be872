#pragma once

#include <cstdint>
#include <string_view>

// Counter-based random numbers. Every draw is a pure function of
// (seed, counter), so results do not depend on call order or thread schedule
// and are bit-identical across platforms (integer mixing only; the normal
// transform uses std::log/std::cos/std::sqrt).
namespace srnr::rng {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t bits(std::uint64_t seed, std::uint64_t counter) noexcept {
  return mix64(mix64(seed) ^ (counter * 0xD1B54A32D192ED03ULL));
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform(std::uint64_t seed, std::uint64_t counter) noexcept {
  return static_cast<double>(bits(seed, counter) >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller on draws 2*counter and 2*counter+1; the sine
// branch is discarded so each counter maps to exactly one variate.
double normal(std::uint64_t seed, std::uint64_t counter) noexcept;

// FNV-1a, used to fold string tags into derived seeds.
constexpr std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Child seed for (parent, tag, index). Distinct tags/indices give
// statistically independent streams.
constexpr std::uint64_t derive(std::uint64_t parent, std::string_view tag,
                               std::uint64_t index = 0) noexcept {
  return mix64(mix64(parent ^ hash_tag(tag)) + mix64(index));
}

// Sequential convenience wrapper over the counter-based functions.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) noexcept : seed_(seed) {}

  std::uint64_t next_bits() noexcept { return bits(seed_, counter_++); }
  double uniform() noexcept { return rng::uniform(seed_, counter_++); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept { return rng::normal(seed_, counter_++); }
  // Uniform integer in [0, n); n > 0. Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace srnr::rng
