// Copyright 2026 The trfam Authors.
//
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

#pragma once

#include <cstdint>
#include <initializer_list>

namespace trf {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Key of a counter-based stream: the n-th draw is a pure function of
/// (key, n), so dropout masks depend only on (seed, step, layer, site).
struct RngKey {
  std::uint64_t value = 0;

  RngKey derive(std::uint64_t tag) const {
    return RngKey{mix64(value ^ mix64(tag + 0x632BE59BD9B4E019ULL))};
  }

  static RngKey from(std::initializer_list<std::uint64_t> parts) {
    RngKey key{0x8BB84B93962EACC9ULL};
    for (auto p : parts) {
      key = key.derive(p);
    }
    return key;
  }

  std::uint64_t bits(std::uint64_t counter) const {
    return mix64(value + counter * 0xD1B54A32D192ED03ULL);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }
};

}  // namespace trf
