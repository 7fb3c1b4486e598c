// Copyright 2026 The redi-toy Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "redi/tensor.hpp"

namespace redi {

// Counter-based generator: the n-th draw is a pure function of (key, n), so
// the full state is two integers and streams can be forked without
// consuming draws from the parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }
  void set_counter(std::uint64_t c) noexcept { counter_ = c; }

  // Independent child stream; does not advance this generator.
  Rng fork(std::uint64_t stream) const {
    return Rng(mix(key_ ^ mix(stream + 0x9e3779b97f4a7c15ULL)));
  }
  Rng fork(std::uint64_t stream, std::uint64_t sub) const { return fork(stream).fork(sub); }

  std::uint64_t next_u64() noexcept { return mix(key_ + 0x9e3779b97f4a7c15ULL * (++counter_)); }

  // [0, 1)
  double uniform() noexcept { return double(next_u64() >> 11) * 0x1.0p-53; }
  // (0, 1]
  double uniform_pos() noexcept { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    require(n > 0, "Rng::uniform_int: empty range");
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Box-Muller, one value per pair of uniforms.
  double normal() noexcept {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Tensor normal(Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = normal();
    return t;
  }

  Tensor uniform(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = uniform(lo, hi);
    return t;
  }

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace redi
