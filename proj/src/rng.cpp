#include "patchssl/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "patchssl/log.hpp"

namespace patchssl {

namespace {
constexpr std::uint64_t kStreamStep = 0x9E3779B97F4A7C15ull;
constexpr std::uint64_t kIndexStep = 0xD1B54A32D192ED03ull;
}  // namespace

double Rng::normal() {
  // Box-Muller; one pair per call keeps the stream stateless between draws.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
  if (n <= 1) return 0;
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::size_t>(x % bound);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, SeedStream stream, std::uint64_t index) {
  const auto s = static_cast<std::uint64_t>(stream);
  return splitmix64(splitmix64(master + s * kStreamStep) + index * kIndexStep);
}

namespace log {
namespace {
Level g_level = Level::info;
}
Level level() { return g_level; }
void set_level(Level lvl) { g_level = lvl; }
}  // namespace log

}  // namespace patchssl
