#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sepprune {

// Deterministic random stream. The mt19937_64 engine is pinned by the
// standard; the transforms below are ours, so identical seeds give identical
// draws on every platform (std::uniform_real_distribution et al. are
// implementation-defined and would not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0,1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform in the open interval (0,1); resamples the measure-zero endpoint.
  double uniform_open() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (no cached spare; two draws per call).
  double normal() {
    double u1 = uniform_open();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Standard Gumbel: -log(-log(U)), U in (0,1).
  double gumbel() { return -std::log(-std::log(uniform_open())); }

  // Uniform integer in [0, n), n >= 1. Multiply-shift; bias < n / 2^64.
  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(engine_()) * n) >> 64);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sepprune
