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
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trfam/attention.hpp"
#include "trfam/features.hpp"
#include "trfam/frontend.hpp"

namespace trf {

inline constexpr std::size_t kHeadDim = 64;

/// Raised with every problem found, not just the first.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct IteratedLossConfig {
  std::vector<std::size_t> tap_layers;  // 1-based layer indices
  std::size_t proj_dim = 256;
  double weight = 0.3;

  bool operator==(const IteratedLossConfig&) const = default;
};

struct EncoderConfig {
  FrontendConfig frontend;
  std::size_t model_dim = 768;
  std::size_t num_layers = 12;
  std::size_t num_heads = 12;
  std::size_t ffn_dim = 3072;
  double dropout = 0.1;
  double layernorm_eps = 1e-5;
  std::size_t num_outputs = 64;
  std::optional<IteratedLossConfig> iterated_loss;
  std::optional<std::size_t> right_context;  // nullopt = full context
  BetaDenominator beta_denominator = BetaDenominator::kHeadDim;

  /// d_model / 64 heads, FFN 4 * d_model.
  static EncoderConfig standard(FrontendMethod method, std::size_t model_dim,
                                std::size_t num_layers, std::size_t num_outputs);

  /// Empty when valid.
  std::vector<std::string> problems() const;
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

struct LrSchedule {
  double warmup_start = 1e-5;
  double peak = 1e-3;
  std::size_t warmup_steps = 8000;

  bool operator==(const LrSchedule&) const = default;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
  LrSchedule schedule;
  AdamConfig adam;
  bool spec_augment = true;
  SpecAugmentPolicy spec_augment_policy;
  std::size_t max_frames_per_batch = 20000;  // 10 ms input frames incl. padding
  double max_segment_sec = 10.0;
  std::optional<double> clip_norm;
  std::size_t max_epochs = 100;
  std::optional<std::size_t> max_steps;
  std::uint64_t seed = 1;

  bool operator==(const TrainConfig&) const = default;
};

struct ExperimentConfig {
  EncoderConfig encoder;
  TrainConfig train;
  std::string train_corpus;
  std::string dev_corpus;
  std::string output_dir;

  std::vector<std::string> problems() const;
};

using KeyValues = std::map<std::string, std::string>;

/// key=value lines; '#' starts a comment; blank lines ignored.
KeyValues parse_key_values(const std::string& text);

/// Canonical text: fixed key order, doubles printed round-trip exact.
std::string to_text(const EncoderConfig& config);
std::string to_text(const ExperimentConfig& config);

/// Unknown keys and malformed values are all reported in one ConfigError.
EncoderConfig encoder_config_from_text(const std::string& text);
ExperimentConfig experiment_config_from_text(const std::string& text);

/// Missing keys keep their defaults.
ExperimentConfig experiment_config_from_values(const KeyValues& values);

/// Architecture keys only. Training and corpus keys are accepted and ignored,
/// so an experiment file can be passed where an encoder config is wanted.
EncoderConfig encoder_config_from_values(const KeyValues& values);

std::string format_double(double v);

}  // namespace trf
