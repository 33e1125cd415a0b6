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

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trfam/config.hpp"
#include "trfam/encoder.hpp"
#include "trfam/trainer.hpp"

namespace trf {

struct LookaheadReport {
  std::optional<std::size_t> per_layer_rc;  // nullopt = unlimited
  std::size_t num_layers = 0;
  long frontend_right_ms = 0;
  long frame_period_ms = 0;
  std::optional<long> total_lookahead_ms;  // nullopt = unbounded

  std::string to_text() const;
};

/// num_layers * rc * frame_period + frontend right context, or unbounded.
LookaheadReport total_lookahead(const EncoderConfig& config, std::optional<std::size_t> rc);

/// Inclusive range of 10 ms input frames that output frame t can depend on
/// under per-layer right context rc, for an utterance of `input_frames`.
struct InputCone {
  std::size_t first = 0;
  std::size_t last = 0;
};

InputCone dependency_cone(const EncoderConfig& config, std::optional<std::size_t> rc,
                          std::size_t output_frame, std::size_t input_frames);

/// Latest input frame whose perturbation changes output frame t, found by
/// perturbing every frame in turn (eval mode). nullopt if none does.
std::optional<std::size_t> measure_last_dependency(const AcousticModel<float>& model,
                                                   const FeatureSequence& x,
                                                   std::optional<std::size_t> rc,
                                                   std::size_t output_frame);

struct RcEvaluation {
  std::optional<std::size_t> rc;
  EvalMetrics metrics;
  LookaheadReport lookahead;
};

/// Evaluates with the right-context limit applied to every layer at inference
/// only, whatever the model was trained with.
RcEvaluation eval_with_rc(const AcousticModel<float>& model,
                          std::span<const LabeledSegment> corpus, std::optional<std::size_t> rc);

std::string rc_label(std::optional<std::size_t> rc);

/// Columns rc, frame_error_rate, mean_ce, lookahead_ms.
void write_rc_csv(const std::filesystem::path& path, std::span<const RcEvaluation> rows);

}  // namespace trf
