// Copyright 2026 The gmerge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Counter-based random streams.
//
// Every random decision in the library is drawn from a stream identified by
// a 64-bit key. Keys are derived by hashing a master seed together with the
// coordinates of the decision (iteration index, model index, tensor name...),
// so the value at a given coordinate never depends on how many other values
// were drawn before it or on the order work is scheduled in.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <string_view>

namespace gmerge::rng {

// SplitMix64 finalizer: a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// FNV-1a over the bytes followed by mix64.
std::uint64_t hash_string(std::string_view text);

// Folds `parts` into `seed` one at a time; order-sensitive.
std::uint64_t derive_key(std::uint64_t seed,
                         std::initializer_list<std::uint64_t> parts);

// Maps 64 random bits onto [0, 1) using the top 53 bits.
constexpr double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Satisfies UniformRandomBitGenerator, so it plugs into <random> and
// Boost.Random distributions. The i-th output is a pure function of
// (key, i) and is also available directly through `at`.
class CounterStream {
 public:
  using result_type = std::uint64_t;

  explicit CounterStream(std::uint64_t key, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() { return at(counter_++); }

  result_type at(std::uint64_t index) const {
    return mix64(key_ + (index + 1) * kGolden);
  }

  double uniform() { return to_unit((*this)()); }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  // A stream whose key is derived from this stream's key and `parts`;
  // the parent's position is unaffected.
  CounterStream child(std::initializer_list<std::uint64_t> parts) const {
    return CounterStream(derive_key(key_, parts));
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace gmerge::rng
