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

#ifndef STYLEMOTION_RNG_HPP_
#define STYLEMOTION_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stylemotion/error.hpp"

namespace stylemotion {

// splitmix64 mixing step; used to derive independent per-item sub-seeds.
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG. All distributions are implemented by hand on top of
// mt19937_64 raw output, so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  // Sub-seed derived from a root seed and an index path. Distinct paths give
  // independent streams regardless of how much each stream is consumed.
  static uint64_t derive(uint64_t seed, std::initializer_list<uint64_t> path) {
    uint64_t state = seed;
    (void)splitmix64(state);
    for (uint64_t p : path) {
      state ^= 0x632be59bd9b4e019ULL + p;
      (void)splitmix64(state);
    }
    return splitmix64(state);
  }

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  int uniform_int(int n) {
    if (n <= 0) throw ConfigError("uniform_int requires n > 0");
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<int>(x % un);
  }

  // Standard normal via Box-Muller; second value of each pair is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_ << ' ' << (has_cached_ ? 1 : 0) << ' ';
    os.precision(17);
    os << cached_;
    return os.str();
  }

  static Rng deserialize(const std::string& text) {
    Rng rng(0);
    std::istringstream is(text);
    int cached_flag = 0;
    is >> rng.eng_ >> cached_flag >> rng.cached_;
    if (!is) throw ParseError("bad rng state string");
    rng.has_cached_ = cached_flag != 0;
    return rng;
  }

 private:
  std::mt19937_64 eng_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace stylemotion

#endif  // STYLEMOTION_RNG_HPP_
