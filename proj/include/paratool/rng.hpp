#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace paratool {

// Counter-based generator: every draw hashes (key, counter) through the
// SplitMix64 finalizer, so identical seed + identical draw sequence gives
// bitwise identical output. split() derives an independent sub-stream whose
// key mixes the parent key with a label; sub-streams never share state with
// the parent.
class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(mix(seed ^ kKeyTag)) {}

  Rng split(std::string_view label) const;
  Rng split(uint64_t label) const;

  uint64_t next_u64();

  // uniform in [0, 1)
  double next_double();

  // inclusive bounds
  int uniform_int(int lo, int hi);

  // Box-Muller; draws exactly two uniforms per call, no cached spare
  double normal(double mean = 0.0, double stddev = 1.0);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<size_t>(uniform_int(0, static_cast<int>(v.size()) - 1))];
  }

  uint64_t key() const { return key_; }
  uint64_t counter() const { return counter_; }

 private:
  static constexpr uint64_t kKeyTag = 0x9e3779b97f4a7c15ull;

  static uint64_t mix(uint64_t z);

  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace paratool
