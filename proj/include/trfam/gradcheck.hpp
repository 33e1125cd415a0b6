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
#include <functional>
#include <string>
#include <vector>

#include "trfam/config.hpp"
#include "trfam/tensor.hpp"

namespace trf {

struct GradCheckOptions {
  std::size_t samples = 0;  // entries checked per input; 0 = all
  double step = 1e-5;       // central difference half-width
  double floor = 1e-4;      // denominator floor for the relative error
  double tolerance = 1e-4;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double worst_analytic = 0.0;  // pair behind max_rel_error
  double worst_numeric = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;

  bool passed() const { return checked > 0 && max_rel_error < tolerance; }
};

/// Compares the tape gradient of loss() with respect to each input against
/// (f(x + h) - f(x - h)) / 2h. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckResult check_gradients(const std::string& name,
                                const std::function<Tensor<double>()>& loss,
                                std::vector<Tensor<double>> inputs,
                                const GradCheckOptions& options);

/// sum_i x_i * w_i with w fixed. Turns any op output into a scalar whose
/// gradient exercises every output entry.
Tensor<double> weighted_sum(const Tensor<double>& x, const std::vector<double>& weights);

/// Whole-model check: train-mode forward (dropout on, fixed key) of a
/// two-utterance batch through `config`, loss including any iterated terms,
/// `samples` entries per parameter tensor.
GradCheckResult check_model_gradients(const EncoderConfig& config, std::size_t samples,
                                      std::uint64_t seed, double tolerance = 1e-3);

struct GradSuiteOptions {
  std::size_t samples = 0;           // per input per op; 0 = all
  std::size_t end_to_end_samples = 24;  // per parameter tensor
  std::uint64_t seed = 1;
  double op_tolerance = 1e-4;
  double end_to_end_tolerance = 1e-3;
};

/// Every differentiable op plus attention, a transformer layer, each
/// frontend and a 2-layer model with iterated loss end to end.
std::vector<GradCheckResult> run_gradient_suite(const GradSuiteOptions& options);

}  // namespace trf
