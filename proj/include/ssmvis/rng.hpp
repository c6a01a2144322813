#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace ssmvis {

/// SplitMix64 generator. Every draw (weight init, shuffles, split
/// sampling, synthetic data) goes through this type so that results are
/// identical across standard libraries; std distributions are
/// implementation-defined and are not used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  void reseed(std::uint64_t seed) { state_ = seed; }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller (the spare value is cached).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Thread-local generator used by the training engine.
Rng& thread_rng();

/// Reseeds the calling thread's generator.
void seed_all(std::uint64_t seed);

/// Mixes a base seed with a label (e.g. an encoder id) into a sub-seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

}  // namespace ssmvis
