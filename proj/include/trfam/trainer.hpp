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
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trfam/checkpoint.hpp"
#include "trfam/config.hpp"
#include "trfam/encoder.hpp"
#include "trfam/features.hpp"

namespace trf {

/// Raised when a loss or gradient turns non-finite. Carries the step.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t step)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Linear from warmup_start at step 0 to peak at warmup_steps, then flat.
double lr_at(const LrSchedule& schedule, std::size_t step);

/// Segments padded to a common length. Frame counts are 10 ms input frames.
struct Batch {
  std::vector<const LabeledSegment*> items;
  std::size_t max_frames = 0;

  std::size_t padded_frames() const { return items.size() * max_frames; }
  std::size_t valid_frames() const;
};

/// Sorts by length and greedily fills each batch while
/// size * longest <= max_frames_per_batch. Throws when one segment alone
/// exceeds the cap.
std::vector<Batch> make_batches(std::span<const LabeledSegment> segments,
                                std::size_t max_frames_per_batch);

class Adam {
 public:
  Adam(const AdamConfig& config, const ParameterSet<float>& params);

  /// One update with the gradients currently held by `params`. The bias
  /// correction uses t = number of updates applied so far, including this one.
  void step(ParameterSet<float>& params, double lr);

  std::size_t updates() const { return t_; }
  const std::vector<std::vector<float>>& first_moments() const { return m_; }
  const std::vector<std::vector<float>>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0.0;      // objective being optimized (iterated when enabled)
  double final_ce = 0.0;  // CE of the output head
  double lr = 0.0;
  double grad_norm = 0.0;
  std::size_t frames = 0;  // valid output frames
  double wall_ms = 0.0;
};

/// Keeps the most recent `capacity` snapshots.
class CheckpointRing {
 public:
  explicit CheckpointRing(std::size_t capacity = 10) : capacity_(capacity) {}
  void push(Checkpoint c);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<Checkpoint>& items() const { return items_; }

 private:
  std::size_t capacity_;
  std::deque<Checkpoint> items_;
};

/// Elementwise arithmetic mean of every tensor. Config and kind come from the
/// first entry; all entries must hold the same names and shapes.
Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints);
Checkpoint average_checkpoints(const CheckpointRing& ring);

struct TrainState {
  explicit TrainState(const EncoderConfig& encoder, const TrainConfig& train);

  TrainConfig config;
  AcousticModel<float> model;
  Adam optimizer;
  std::size_t step = 0;
  std::size_t epoch = 0;
  CheckpointRing ring{10};
};

/// Forward in training mode on an already augmented batch, loss, backward,
/// Adam update at lr_at(step). Throws NumericError on a non-finite loss or
/// gradient, leaving the parameters untouched.
StepMetrics train_step(TrainState& state, const Batch& batch);

/// Applies the training SpecAugment policy to every item with an RNG keyed by
/// (seed, step, position in batch). Returns owning copies.
std::vector<LabeledSegment> augment_batch(const Batch& batch, const TrainConfig& config,
                                          std::size_t step);

struct EvalMetrics {
  double mean_ce = 0.0;
  double frame_error_rate = 0.0;
  std::size_t frames = 0;
};

/// Eval-mode plain CE and argmax frame error over every frame of the corpus.
EvalMetrics evaluate(const AcousticModel<float>& model, std::span<const LabeledSegment> corpus,
                     const ForwardOptions& options, std::size_t max_frames_per_batch = 4000);

struct EpochReport {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<EvalMetrics> dev;
};

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  /// Called after each epoch with the model as of that epoch.
  std::function<void(const EpochReport&, const TrainState&)> on_epoch;
};

struct TrainResult {
  std::vector<StepMetrics> history;
  std::vector<EpochReport> epochs;
  std::optional<Checkpoint> best;           // lowest dev CE among epoch ends
  std::optional<EvalMetrics> best_dev;
  std::optional<Checkpoint> average;        // mean of the ring
  std::optional<EvalMetrics> average_dev;
};

/// Segments the training corpus, then loops epochs of shuffled batches until
/// max_epochs or max_steps. Batches are augmented by a producer thread
/// feeding a bounded queue. An epoch cut short by max_steps still ends with
/// an epoch report and snapshot.
TrainResult train(TrainState& state, std::span<const LabeledSegment> train_corpus,
                  std::span<const LabeledSegment> dev_corpus, const TrainHooks& hooks = {});

}  // namespace trf
