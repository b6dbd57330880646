#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace rhythmvec {

/// Seeded random source whose output is identical on every platform.
///
/// std::mt19937_64 is fully specified by the standard, but the std
/// distributions are not, so uniform/normal/integer draws are derived here
/// from the raw engine bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; one cached spare.
  double normal();

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 step, used to derive independent stream seeds from one seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace rhythmvec
