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

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trfam/attention.hpp"
#include "trfam/config.hpp"
#include "trfam/features.hpp"
#include "trfam/frontend.hpp"
#include "trfam/ops.hpp"
#include "trfam/parameters.hpp"

namespace trf {

template <std::floating_point T>
struct LayerNormParams {
  Tensor<T> gamma, beta;

  static LayerNormParams allocate(ParameterSet<T>& params, const std::string& prefix,
                                  std::size_t dim);
};

template <std::floating_point T>
struct TransformerLayerParams {
  LayerNormParams<T> ln1, ln2, ln3;
  MhaParams<T> mha;
  Tensor<T> fc1_w, fc1_b;  // [ffn x d], [ffn]
  Tensor<T> fc2_w, fc2_b;  // [d x ffn], [d]

  static TransformerLayerParams allocate(ParameterSet<T>& params, const std::string& prefix,
                                         const EncoderConfig& config);
};

struct LayerContext {
  double dropout = 0.0;
  Mode mode = Mode::kEval;
  RngKey key{};
  double layernorm_eps = 1e-5;
  bool use_ln3 = true;  // off only for probing the bypass behaviour
};

/// Pre-LN layer over a packed batch x [B * T_max x d].
///   y1 = x + Dropout(MHA(LN1 x)); y2 = y1 + Dropout(FC2 gelu(FC1 LN2 y1)); out = LN3 y2
/// Rows past a sequence's length carry no meaning to the caller.
template <std::floating_point T>
Tensor<T> transformer_layer(const Tensor<T>& x, const TransformerLayerParams<T>& params,
                            const AttentionMask& mask, const LayerContext& context);

/// Auxiliary classifier on an intermediate layer: out(ReLU(proj(tap))).
template <std::floating_point T>
struct AuxHeadParams {
  std::size_t layer = 0;  // 1-based tap layer
  Tensor<T> proj_w, proj_b, out_w, out_b;
};

struct ForwardOptions {
  Mode mode = Mode::kEval;
  RngKey key{};
  std::optional<std::size_t> right_context;  // per layer; nullopt = full context
  bool use_ln3 = true;
};

template <std::floating_point T>
struct EncodeOutput {
  Tensor<T> final;                      // [B * T_max x d]
  std::map<std::size_t, Tensor<T>> taps;  // 1-based layer -> [B * T_max x d]
  std::vector<std::size_t> lengths;     // per-sequence output frames
  std::size_t max_length = 0;

  std::size_t batch() const { return lengths.size(); }
  std::size_t rows() const { return batch() * max_length; }
  /// Rows of sequence b, [lengths[b] x d], detached.
  Tensor<T> sequence(const Tensor<T>& packed, std::size_t b) const;
};

/// Targets aligned with the packed rows. Padding rows are invalid.
struct PackedTargets {
  std::vector<int> targets;
  std::vector<std::uint8_t> valid;
  std::size_t valid_frames = 0;
};

PackedTargets pack_targets(std::span<const std::vector<int>* const> labels,
                           std::span<const std::size_t> lengths, std::size_t max_length);

/// L = CE(final) + weight * sum_j CE(aux_j). Throws if weight is given aux
/// logits of a different count than expected.
template <std::floating_point T>
Tensor<T> interpolate_losses(const Tensor<T>& final_logits,
                             const std::vector<Tensor<T>>& aux_logits,
                             const PackedTargets& targets, double weight);

template <std::floating_point T>
struct LossBreakdown {
  Tensor<T> total;      // scalar, on the tape when recording
  double final_ce = 0;  // CE of the output head alone
  std::vector<double> aux_ce;
  std::size_t frames = 0;
};

struct ParameterCount {
  std::size_t inference = 0;
  std::size_t training_only = 0;
  std::vector<std::pair<std::string, std::size_t>> breakdown;

  std::size_t total() const { return inference + training_only; }
};

/// Closed-form count from the configuration alone.
ParameterCount count_parameters(const EncoderConfig& config);

/// Frontend, transformer stack, output head and optional auxiliary heads.
/// Movable, not copyable: the frontend and layer structs hold handles into
/// the parameter set. Use clone() for an independent copy.
template <std::floating_point T>
class AcousticModel {
 public:
  explicit AcousticModel(const EncoderConfig& config, bool with_aux_heads = true);
  AcousticModel(AcousticModel&&) noexcept = default;
  AcousticModel& operator=(AcousticModel&&) noexcept = default;
  AcousticModel(const AcousticModel&) = delete;
  AcousticModel& operator=(const AcousticModel&) = delete;

  AcousticModel clone() const;

  const EncoderConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  const std::vector<TransformerLayerParams<T>>& layers() const { return layers_; }
  const std::vector<AuxHeadParams<T>>& aux_heads() const { return aux_; }
  bool has_aux_heads() const { return !aux_.empty(); }
  const Frontend<T>& frontend() const { return frontend_; }

  void initialize(std::uint64_t seed) { params_.initialize(seed); }

  /// Copies values of same-named parameters; throws on shape mismatch or
  /// when a parameter of this model has no counterpart.
  void copy_values_from(const AcousticModel& other, bool require_aux = true);

  ForwardOptions eval_options() const;
  ForwardOptions train_options(RngKey key) const;

  EncodeOutput<T> encode(std::span<const FeatureSequence* const> batch,
                         const ForwardOptions& options) const;
  EncodeOutput<T> encode(const FeatureSequence& x, const ForwardOptions& options) const;

  /// Per-frame logits [rows x K].
  Tensor<T> output_head(const Tensor<T>& z) const;
  Tensor<T> aux_logits(std::size_t head, const Tensor<T>& tap) const;

  /// Cross-entropy over valid frames, iterated when the config asks for it
  /// and the aux heads exist.
  LossBreakdown<T> loss(const EncodeOutput<T>& encoded, const PackedTargets& targets) const;

 private:
  EncoderConfig config_;
  ParameterSet<T> params_;
  Frontend<T> frontend_;
  std::vector<TransformerLayerParams<T>> layers_;
  Tensor<T> out_w_, out_b_;
  std::vector<AuxHeadParams<T>> aux_;
};

}  // namespace trf
