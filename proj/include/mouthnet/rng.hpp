#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string_view>
#include <utility>

namespace mouthnet {

// 64-bit FNV-1a. Used for substream keys and run-name seeds, so it must never
// change between builds.
std::uint64_t stable_hash(std::string_view text);

// Counter-based generator: output i is a bijective mix of (key, i). Every
// stochastic draw in a run comes from a substream of one root Rng, so results
// depend only on the seed and the substream names, never on call order across
// unrelated consumers.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  // Independent stream derived from this generator's seed and a name. The
  // parent's counter is not consumed.
  Rng substream(std::string_view name) const;

  double uniform();                     // [0, 1)
  double uniform(double lo, double hi); // [lo, hi)
  double normal();                      // N(0, 1)
  std::size_t below(std::size_t n);     // [0, n)

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_;
};

// Fisher-Yates driven by Rng::below, so the permutation depends only on the
// generator state and not on the standard library's shuffle.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace mouthnet
