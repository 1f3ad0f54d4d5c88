#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace patchtts {

/// Stateless 64-bit finalizer (splitmix64 output stage).
uint64_t mix64(uint64_t x);

/// Derives an independent seed for a named subsystem:
/// mix64(base ^ fnv1a64(label)). Labels in use: "data", "init", "train",
/// "sampling", "pairs".
uint64_t derive_seed(uint64_t base, std::string_view label);
uint64_t derive_seed(uint64_t base, uint64_t index);

/// Seeded generator with portable uniform/normal draws (the std
/// distributions are implementation-defined, so they are not used).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace patchtts
