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
#include <optional>
#include <span>
#include <vector>

#include "trfam/rng.hpp"
#include "trfam/tensor.hpp"

// Differentiable operations. Each op computes its result eagerly and, when a
// Tape is active and some input requires gradients, records a closure that
// accumulates into the inputs' gradient buffers.
namespace trf {

enum class Mode { kTrain, kEval };

/// Row-wise keep mask for softmax_masked: keep[r * cols + c] != 0 means the
/// logit at (r, c) participates.
struct KeepMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> keep;

  static KeepMask all(std::size_t rows, std::size_t cols);
  bool kept(std::size_t r, std::size_t c) const { return keep[r * cols + c] != 0; }
};

enum class PadMode { kZero, kReplicate };

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& x);

/// [m x k] * [k x n].
template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// [m x k] * [n x k]^T.
template <std::floating_point T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

/// x [n x in] * w^T + bias, with w stored [out x in]. bias may be undefined.
template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& x);

/// Exact erf form: x * Phi(x).
template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& x);

/// Normalizes over the last axis, then applies gamma/beta.
template <std::floating_point T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, T eps);

/// Softmax over the last axis restricted to kept positions. Masked entries
/// are exactly zero. A row without any kept position is an error.
template <std::floating_point T>
Tensor<T> softmax_masked(const Tensor<T>& logits, const KeepMask& mask);

/// Inverted dropout; identity in eval mode or when p == 0.
template <std::floating_point T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, RngKey key);

/// Mean over valid rows of -log softmax(logits)[target]. valid may be empty
/// (all rows valid).
template <std::floating_point T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> valid = {});

/// Same-padded 3x3 cross-correlation over x [C_in x F x T] with
/// w [C_out x C_in x 3 x 3] and bias [C_out].
template <std::floating_point T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 PadMode freq_pad = PadMode::kZero,
                 PadMode time_pad = PadMode::kZero);

/// 2x2 max pooling over [C x F x T]; out extent = (in - 2) / stride + 1.
/// Ties route the gradient to the first element in row-major window order.
template <std::floating_point T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t stride_f,
                    std::size_t stride_t);

/// Edge-replication padding of a [C x F x T] tensor along axis 1 or 2.
template <std::floating_point T>
Tensor<T> pad_replicate(const Tensor<T>& x, std::size_t axis,
                        std::size_t before, std::size_t after);

/// [C x F x T] -> [T x C*F], column index c * F + f.
template <std::floating_point T>
Tensor<T> frames_from_channels(const Tensor<T>& x);

/// Copy of the 2-D block rows [r0, r0 + nr) x cols [c0, c0 + nc).
template <std::floating_point T>
Tensor<T> slice(const Tensor<T>& x, std::size_t r0, std::size_t nr,
                std::size_t c0, std::size_t nc);

template <std::floating_point T>
struct Block {
  Tensor<T> value;
  std::size_t row = 0;
  std::size_t col = 0;
};

/// Places non-overlapping 2-D blocks into a zero [rows x cols] tensor.
template <std::floating_point T>
Tensor<T> assemble(std::size_t rows, std::size_t cols,
                   const std::vector<Block<T>>& blocks);

}  // namespace trf
