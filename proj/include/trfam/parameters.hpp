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

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "trfam/rng.hpp"
#include "trfam/tensor.hpp"

namespace trf {

enum class Init {
  kZeros,
  kOnes,
  kTruncatedNormal,  // std 0.02, cut at two standard deviations
  kHe,               // normal with std sqrt(2 / fan_in), fan_in = size / dim(0)
};

template <std::floating_point T>
struct NamedParameter {
  std::string name;
  Tensor<T> value;
  Init init = Init::kZeros;
  bool training_only = false;
};

/// Ordered registry of trainable tensors. Order is the allocation order and
/// is stable for a given configuration.
template <std::floating_point T>
class ParameterSet {
 public:
  Tensor<T> add(std::string name, Shape shape, Init init, bool training_only = false) {
    Tensor<T> t(std::move(shape));
    t.set_requires_grad(true);
    items_.push_back({std::move(name), t, init, training_only});
    return t;
  }

  std::vector<NamedParameter<T>>& items() { return items_; }
  const std::vector<NamedParameter<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  const NamedParameter<T>* find(const std::string& name) const {
    for (const auto& p : items_) {
      if (p.name == name) {
        return &p;
      }
    }
    return nullptr;
  }

  std::size_t count(bool include_training_only) const {
    std::size_t n = 0;
    for (const auto& p : items_) {
      if (include_training_only || !p.training_only) {
        n += p.value.size();
      }
    }
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) {
      if (p.value.has_grad()) {
        p.value.zero_grad();
      }
    }
  }

  /// Each tensor draws from its own stream keyed by (seed, position).
  void initialize(std::uint64_t seed) {
    for (std::size_t k = 0; k < items_.size(); ++k) {
      auto& p = items_[k];
      std::mt19937_64 rng(RngKey::from({seed, k}).value);
      auto v = p.value.data();
      switch (p.init) {
        case Init::kZeros:
          std::fill(v.begin(), v.end(), T(0));
          break;
        case Init::kOnes:
          std::fill(v.begin(), v.end(), T(1));
          break;
        case Init::kTruncatedNormal: {
          std::normal_distribution<double> normal(0.0, 1.0);
          for (auto& x : v) {
            double z;
            do {
              z = normal(rng);
            } while (std::abs(z) > 2.0);
            x = static_cast<T>(0.02 * z);
          }
          break;
        }
        case Init::kHe: {
          const double fan_in =
              static_cast<double>(p.value.size()) / static_cast<double>(p.value.dim(0));
          std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
          for (auto& x : v) {
            x = static_cast<T>(normal(rng));
          }
          break;
        }
      }
    }
  }

 private:
  std::vector<NamedParameter<T>> items_;
};

}  // namespace trf
