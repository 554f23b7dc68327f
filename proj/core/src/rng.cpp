#include "hcma/rng.hpp"

#include <cmath>

namespace hcma {

uint64_t fnv1a64(std::string_view bytes, uint64_t basis) {
  uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

Rng Rng::stream(std::string_view name) const {
  uint64_t h = fnv1a64(name, seed_ ^ 14695981039346656037ull);
  // splitmix-style finalizer to decorrelate nearby seeds
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebull;
  h ^= h >> 31;
  return Rng(h);
}

double Rng::uniform() {
  return double(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (have_cached_) {
    have_cached_ = false;
    return cached_;
  }
  double u1 = 0.0;
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  cached_ = r * std::sin(a);
  have_cached_ = true;
  return r * std::cos(a);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  const uint64_t span = uint64_t(hi - lo) + 1;
  return lo + int64_t(next_u64() % span);
}

void Rng::fill_normal(std::span<float> out, float mean, float stddev) {
  for (float& v : out) v = mean + stddev * float(normal());
}

void Rng::fill_normal(std::span<double> out, double mean, double stddev) {
  for (double& v : out) v = mean + stddev * normal();
}

void Rng::fill_uniform(std::span<float> out, float lo, float hi) {
  for (float& v : out) v = lo + (hi - lo) * float(uniform());
}

}  // namespace hcma
