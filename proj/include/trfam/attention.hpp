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
#include <vector>

#include "trfam/ops.hpp"
#include "trfam/parameters.hpp"

namespace trf {

/// Valid lengths of the sequences packed in a batch plus a per-layer right
/// context budget. Query t of a sequence may attend to key tau iff
/// tau < length and tau <= t + right_context. Padded positions neither attend
/// nor are attended to.
struct AttentionMask {
  std::vector<std::size_t> lengths;
  std::optional<std::size_t> right_context;  // nullopt = unlimited

  static AttentionMask full(std::vector<std::size_t> lengths) {
    return AttentionMask{std::move(lengths), std::nullopt};
  }

  bool allows(std::size_t t, std::size_t tau, std::size_t length) const {
    return tau < length && (!right_context || tau <= t + *right_context);
  }

  /// Keep mask of a [length x length] logit block.
  KeepMask keep(std::size_t length) const;
};

enum class BetaDenominator { kHeadDim, kModelDim };

/// Fused per-head projections: rows [h * head_dim, (h + 1) * head_dim) of
/// wq/wk/wv belong to head h. wo maps the concatenated heads back to d_model.
template <std::floating_point T>
struct MhaParams {
  std::size_t model_dim = 0;
  std::size_t num_heads = 0;
  std::size_t head_dim = 64;
  BetaDenominator beta_denominator = BetaDenominator::kHeadDim;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;

  static MhaParams allocate(ParameterSet<T>& params, const std::string& prefix,
                            std::size_t model_dim, std::size_t num_heads,
                            std::size_t head_dim = 64,
                            BetaDenominator beta = BetaDenominator::kHeadDim);

  T beta() const;
};

/// Context for dropout inside attention.
struct DropoutSpec {
  double p = 0.0;
  Mode mode = Mode::kEval;
  RngKey key{};
};

/// Single head over a single sequence x [T x d_model] -> [T x head_dim].
template <std::floating_point T>
Tensor<T> attend(const Tensor<T>& x, const MhaParams<T>& params, std::size_t head,
                 const AttentionMask& mask, const DropoutSpec& dropout);

/// x packs B sequences of max length T_max as [B * T_max x d_model]. Rows past
/// a sequence's length are padding and come out as zero before wo.
template <std::floating_point T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const MhaParams<T>& params,
                               const AttentionMask& mask, const DropoutSpec& dropout);

}  // namespace trf
