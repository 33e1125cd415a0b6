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

#include <optional>
#include <string>
#include <string_view>

#include "trfam/features.hpp"
#include "trfam/ops.hpp"
#include "trfam/parameters.hpp"

// Positional-information frontends. Every method maps 80-dim features at
// 10 ms to a [T' x d_model] sequence at 20 ms with T' = ceil(T / 2).
namespace trf {

enum class FrontendMethod { kNone, kSinusoid, kFrameStacking, kConvolution };

std::string_view to_string(FrontendMethod method);
std::optional<FrontendMethod> parse_frontend_method(std::string_view text);

struct FrontendConfig {
  FrontendMethod method = FrontendMethod::kConvolution;
  std::size_t block1_channels = 32;
  std::size_t block2_channels = 64;

  bool operator==(const FrontendConfig&) const = default;
};

inline constexpr std::size_t kFrameStackingWindow = 9;

/// Width of the per-frame vector fed to the final projection.
std::size_t projection_input_dim(const FrontendConfig& config);

/// Input frames feeding output frame t: [2t + first, 2t + last].
struct FrameSpan {
  long first = 0;
  long last = 0;
};

FrameSpan input_span(FrontendMethod method);

/// Receptive field in ms, measured from the centre of the 20 ms output frame
/// (10 ms input frame i covers [10i, 10i + 10) ms).
struct ReceptiveField {
  long left_ms = 0;
  long right_ms = 0;
};

ReceptiveField receptive_field(FrontendMethod method);

/// p_t[2j] = sin(t / 10000^(2j/d)), p_t[2j+1] = cos(t / 10000^(2j/d)).
class PositionalEmbeddingTable {
 public:
  PositionalEmbeddingTable(std::size_t max_frames, std::size_t dim);

  static double value(std::size_t t, std::size_t i, std::size_t dim);

  std::size_t max_frames() const { return max_frames_; }
  std::size_t dim() const { return dim_; }
  double at(std::size_t t, std::size_t i) const { return values_[t * dim_ + i]; }
  /// Grows the table to cover at least `frames` positions.
  void extend(std::size_t frames);

  template <std::floating_point T>
  Tensor<T> rows(std::size_t frames) const;

 private:
  std::size_t max_frames_;
  std::size_t dim_;
  std::vector<double> values_;
};

template <std::floating_point T>
class Frontend {
 public:
  Frontend(const FrontendConfig& config, std::size_t model_dim, ParameterSet<T>& params);

  const FrontendConfig& config() const { return config_; }

  /// [T' x d_model].
  Tensor<T> forward(const FeatureSequence& x) const;

  /// Per-frame vector before the final projection: [T' x projection_input_dim].
  Tensor<T> features(const FeatureSequence& x) const;

 private:
  Tensor<T> vgg(const FeatureSequence& x) const;

  FrontendConfig config_;
  std::size_t model_dim_;
  Tensor<T> proj_w_, proj_b_;
  Tensor<T> conv_w_[4], conv_b_[4];
  PositionalEmbeddingTable table_;
};

}  // namespace trf
