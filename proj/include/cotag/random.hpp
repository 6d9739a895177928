#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cotag {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Seed for a named stream of a simulation seed. Streams with different
/// names are independent, so adding draws to one subsystem leaves the others
/// untouched.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view name) noexcept;

/// Deterministic generator. std::mt19937_64's output is fixed by the
/// standard; the distributions below are ours because the standard library
/// ones are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view stream)
      : engine_(stream_seed(seed, stream)) {}

  std::uint64_t next() { return engine_(); }
  std::uint8_t byte() { return static_cast<std::uint8_t>(engine_() >> 56); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  double normal(double mean, double stddev);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cotag
