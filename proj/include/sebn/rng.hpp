// sebn/rng.hpp

// Copyright 2026  sebn project

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SEBN_RNG_HPP_
#define SEBN_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace sebn {

/// Counter-based splittable random stream (SplitMix64 finalizer).
///
/// Every consumer derives its own child stream via split(), so draws in one
/// subsystem never perturb another. Identical (seed, label path) always
/// reproduces the identical sequence; no libstdc++ distribution objects are
/// used, keeping sequences stable across standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(mix(seed ^ 0x5851F42D4C957F2DULL)) {}

  uint64_t next_u64() { return mix(seed_ + (++counter_) * kGolden); }

  /// Child stream identified by a label; independent of draws made so far.
  Rng split(std::string_view label) const {
    Rng child(0);
    child.seed_ = mix(seed_ ^ fnv1a(label));
    child.counter_ = 0;
    return child;
  }

  /// Child stream identified by an integer key (e.g. speaker index).
  Rng split(uint64_t key) const {
    Rng child(0);
    child.seed_ = mix(seed_ ^ mix(key + 0x9E3779B97F4A7C15ULL));
    child.counter_ = 0;
    return child;
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one value per draw pair).
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n), n > 0.
  int uniform_int(int n) {
    const auto wide = static_cast<__uint128_t>(next_u64()) *
                      static_cast<__uint128_t>(static_cast<uint64_t>(n));
    return static_cast<int>(static_cast<uint64_t>(wide >> 64));
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  static uint64_t mix(uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (const char c : s) {
      h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
      h *= 0x100000001B3ULL;
    }
    return h;
  }

  uint64_t seed_;
  uint64_t counter_ = 0;
};

}  // namespace sebn

#endif  // SEBN_RNG_HPP_
