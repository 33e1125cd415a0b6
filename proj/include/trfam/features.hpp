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
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trfam/tensor.hpp"

namespace trf {

inline constexpr std::size_t kFeatureDim = 80;
inline constexpr std::uint32_t kInputPeriodMs = 10;
inline constexpr std::uint32_t kOutputPeriodMs = 20;

/// Log-mel feature matrix [T x dim] with its frame period.
struct FeatureSequence {
  Tensor<float> frames;
  std::uint32_t frame_period_ms = kInputPeriodMs;
  std::string utterance_id;

  std::size_t num_frames() const { return frames.dim(0); }
  std::size_t dim() const { return frames.dim(1); }
  double duration_sec() const {
    return static_cast<double>(num_frames() * frame_period_ms) / 1000.0;
  }
};

/// Validates ingestion invariants (80-dim, T >= 1, period 10 or 20 ms).
FeatureSequence make_feature_sequence(Tensor<float> frames,
                                      std::uint32_t frame_period_ms,
                                      std::string utterance_id);

/// Features plus per-frame targets at the 20 ms output rate.
struct LabeledSegment {
  FeatureSequence features;
  std::vector<int> labels;
};

/// Number of 20 ms output frames produced from `num_frames` input frames.
std::size_t output_frame_count(std::size_t num_frames, std::uint32_t frame_period_ms);

/// Output frame t concatenates input frames [t*stride, t*stride + n_stack),
/// repeating the last input frame past the end.
FeatureSequence stack_stride(const FeatureSequence& x, std::size_t n_stack,
                             std::size_t stride);

/// Inverse of stack_stride(x, n, n): splits each frame into n frames and drops
/// the end padding beyond `original_frames`.
FeatureSequence unstack(const FeatureSequence& x, std::size_t n,
                        std::size_t original_frames);

struct SpecAugmentPolicy {
  std::size_t num_freq_masks = 2;
  std::size_t max_freq_width = 27;
  std::size_t num_time_masks = 2;
  std::size_t max_time_width = 100;
  double max_time_fraction = 1.0;

  static SpecAugmentPolicy none() { return {0, 0, 0, 0, 1.0}; }
  bool is_noop() const {
    return (num_freq_masks == 0 || max_freq_width == 0) &&
           (num_time_masks == 0 || max_time_width == 0);
  }
  bool operator==(const SpecAugmentPolicy&) const = default;
};

/// Masked cells of a [T x dim] matrix, row-major.
struct CellMask {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<std::uint8_t> masked;

  double fraction() const;
};

/// Draws frequency bands then time spans: width ~ U{0..max}, start uniform
/// over the admissible range. Time widths are capped by
/// floor(max_time_fraction * T).
CellMask draw_spec_augment_mask(std::size_t frames, std::size_t dim,
                                const SpecAugmentPolicy& policy, std::mt19937_64& rng);

/// Sets masked cells to the per-utterance mean. No time warping.
FeatureSequence spec_augment(const FeatureSequence& x, const SpecAugmentPolicy& policy,
                             std::mt19937_64& rng);

/// Greedy split into contiguous pieces no longer than max_sec. Boundaries are
/// aligned to the 20 ms label grid.
std::vector<LabeledSegment> segment(const FeatureSequence& x, std::span<const int> labels,
                                    double max_sec = 10.0);

// --- file formats -----------------------------------------------------------
//
// Feature file: "TRFF", u32 version (1), u32 T, u32 dim, u32 frame_period_ms,
// then T*dim little-endian f32 values, row-major.
// Label file: one integer per output frame, newline-separated text.

inline constexpr char kFeatureMagic[4] = {'T', 'R', 'F', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

void write_features(const std::filesystem::path& path, const FeatureSequence& seq);
FeatureSequence read_features(const std::filesystem::path& path, std::string utterance_id);

void write_labels(const std::filesystem::path& path, std::span<const int> labels);
std::vector<int> read_labels(const std::filesystem::path& path);

/// A corpus directory holds utts.list plus <id>.feat / <id>.lab per utterance.
void write_corpus(const std::filesystem::path& dir, const std::vector<LabeledSegment>& utts);
std::vector<LabeledSegment> read_corpus(const std::filesystem::path& dir);

// --- synthetic corpus -------------------------------------------------------

struct ToyCorpusOptions {
  std::size_t num_utts = 200;
  double min_sec = 1.0;
  double max_sec = 2.0;
  std::size_t num_labels = 64;
  std::uint64_t seed = 7;
};

/// Label sequences come from a sticky Markov chain over the label inventory;
/// each 20 ms label frame emits two 10 ms feature frames around a per-label
/// prototype, shifted by a per-utterance offset and corrupted by noise.
class ToyTask {
 public:
  ToyTask(std::size_t num_labels, std::uint64_t seed);

  std::size_t num_labels() const { return num_labels_; }
  /// Row-stochastic [K x K] transition matrix.
  const std::vector<double>& transitions() const { return transitions_; }
  double transition(std::size_t from, std::size_t to) const {
    return transitions_[from * num_labels_ + to];
  }

  std::vector<int> sample_labels(std::size_t length, std::mt19937_64& rng) const;
  LabeledSegment sample_utterance(std::size_t num_label_frames, std::mt19937_64& rng,
                                  std::string utterance_id) const;

  static constexpr double kSelfLoop = 0.6;
  static constexpr double kNoiseStd = 1.0;
  static constexpr double kOffsetStd = 0.5;

 private:
  std::size_t num_labels_;
  std::vector<double> transitions_;
  std::vector<float> prototypes_;
};

/// Utterances named utt00000, utt00001, ...; `stream` selects an independent
/// sampling stream over the same task (0 = train, 1 = dev).
std::vector<LabeledSegment> generate_toy_corpus(const ToyCorpusOptions& options,
                                                std::uint64_t stream = 0);

}  // namespace trf
