#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace patchssl {

// mt19937_64 with portable distribution code, so sequences do not depend on
// the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double sigma) { return mean + sigma * normal(); }
  // Unbiased integer in [0, n).
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename V>
  void shuffle(std::vector<V>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Named seed streams derived from one master seed. A stream seed is
//   splitmix64(splitmix64(master + stream * kStreamStep) + index * kIndexStep)
// so that every (stream, index) pair is independent and reproducible.
enum class SeedStream : std::uint64_t {
  split = 1,
  subset = 2,
  init_discriminator = 3,
  init_generator = 4,
  training = 5,
  augmentation = 6,
  repeat = 7,
  synth = 8,
  epoch = 9,
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, SeedStream stream, std::uint64_t index = 0);

}  // namespace patchssl
