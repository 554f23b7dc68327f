#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace hcma {

/// Deterministic RNG with named substreams. All randomness in the pipeline
/// flows from one root seed; stages derive independent streams by name so
/// that changing one stage's draw count cannot shift another stage's stream.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed), seed_(seed) {}

  /// Child stream derived from this stream's seed and a name.
  Rng stream(std::string_view name) const;

  uint64_t next_u64() { return engine_(); }
  /// Uniform in [0,1).
  double uniform();
  /// Standard normal (Box-Muller; fully deterministic, no stdlib distribution).
  double normal();
  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);

  void fill_normal(std::span<float> out, float mean = 0.0f, float stddev = 1.0f);
  void fill_normal(std::span<double> out, double mean = 0.0, double stddev = 1.0);
  void fill_uniform(std::span<float> out, float lo, float hi);

  uint64_t seed() const { return seed_; }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

/// FNV-1a over bytes; also used for config digests.
uint64_t fnv1a64(std::string_view bytes, uint64_t basis = 14695981039346656037ull);

}  // namespace hcma
