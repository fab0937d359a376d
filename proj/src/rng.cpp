#include "paratool/rng.hpp"

#include <cmath>

namespace paratool {

namespace {

// FNV-1a over the label bytes, used only to turn labels into salt values.
uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : s) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

uint64_t Rng::mix(uint64_t z) {
  // SplitMix64 finalizer
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Rng Rng::split(std::string_view label) const { return split(fnv1a(label)); }

Rng Rng::split(uint64_t label) const {
  Rng child(0);
  child.key_ = mix(key_ ^ mix(label ^ 0xd1b54a32d192ed03ull));
  child.counter_ = 0;
  return child;
}

uint64_t Rng::next_u64() { return mix(key_ ^ mix(counter_++)); }

double Rng::next_double() {
  // 53 bits of mantissa
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int Rng::uniform_int(int lo, int hi) {
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

double Rng::normal(double mean, double stddev) {
  const double u1 = 1.0 - next_double();  // avoid log(0)
  const double u2 = next_double();
  const double mag = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * mag * std::cos(2.0 * M_PI * u2);
}

}  // namespace paratool
