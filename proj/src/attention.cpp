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

#include "trfam/attention.hpp"

#include <cmath>

namespace trf {

KeepMask AttentionMask::keep(std::size_t length) const {
  KeepMask m{length, length, std::vector<std::uint8_t>(length * length, 0)};
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t tau = 0; tau < length; ++tau) {
      m.keep[t * length + tau] = allows(t, tau, length) ? 1 : 0;
    }
  }
  return m;
}

template <std::floating_point T>
MhaParams<T> MhaParams<T>::allocate(ParameterSet<T>& params, const std::string& prefix,
                                    std::size_t model_dim, std::size_t num_heads,
                                    std::size_t head_dim, BetaDenominator beta) {
  if (num_heads == 0 || head_dim == 0) {
    throw std::invalid_argument("attention needs at least one head of positive size");
  }
  MhaParams p;
  p.model_dim = model_dim;
  p.num_heads = num_heads;
  p.head_dim = head_dim;
  p.beta_denominator = beta;
  const std::size_t inner = num_heads * head_dim;
  p.wq = params.add(prefix + "q.weight", Shape{inner, model_dim}, Init::kTruncatedNormal);
  p.bq = params.add(prefix + "q.bias", Shape{inner}, Init::kZeros);
  p.wk = params.add(prefix + "k.weight", Shape{inner, model_dim}, Init::kTruncatedNormal);
  p.bk = params.add(prefix + "k.bias", Shape{inner}, Init::kZeros);
  p.wv = params.add(prefix + "v.weight", Shape{inner, model_dim}, Init::kTruncatedNormal);
  p.bv = params.add(prefix + "v.bias", Shape{inner}, Init::kZeros);
  p.wo = params.add(prefix + "o.weight", Shape{model_dim, inner}, Init::kTruncatedNormal);
  p.bo = params.add(prefix + "o.bias", Shape{model_dim}, Init::kZeros);
  return p;
}

template <std::floating_point T>
T MhaParams<T>::beta() const {
  const std::size_t d = beta_denominator == BetaDenominator::kHeadDim ? head_dim : model_dim;
  return T(1) / std::sqrt(static_cast<T>(d));
}

namespace {

template <std::floating_point T>
struct Projections {
  Tensor<T> q, k, v;
};

template <std::floating_point T>
Projections<T> project(const Tensor<T>& x, const MhaParams<T>& p) {
  if (x.rank() != 2 || x.dim(1) != p.model_dim) {
    throw ShapeError("attention input " + to_string(x.shape()) + " does not match d_model " +
                     std::to_string(p.model_dim));
  }
  return {linear(x, p.wq, p.bq), linear(x, p.wk, p.bk), linear(x, p.wv, p.bv)};
}

// Attention of one head over rows [row0, row0 + length) of the projections.
template <std::floating_point T>
Tensor<T> head_attention(const Projections<T>& proj, const MhaParams<T>& p, std::size_t head,
                         std::size_t row0, std::size_t length, const AttentionMask& mask,
                         const DropoutSpec& dropout, RngKey key) {
  const std::size_t c0 = head * p.head_dim;
  Tensor<T> q = slice(proj.q, row0, length, c0, p.head_dim);
  Tensor<T> k = slice(proj.k, row0, length, c0, p.head_dim);
  Tensor<T> v = slice(proj.v, row0, length, c0, p.head_dim);
  Tensor<T> alpha = softmax_masked(scale(matmul_nt(q, k), p.beta()), mask.keep(length));
  alpha = trf::dropout(alpha, dropout.p, dropout.mode, key);
  return matmul(alpha, v);
}

}  // namespace

template <std::floating_point T>
Tensor<T> attend(const Tensor<T>& x, const MhaParams<T>& params, std::size_t head,
                 const AttentionMask& mask, const DropoutSpec& dropout) {
  if (head >= params.num_heads) {
    throw std::out_of_range("attend: head " + std::to_string(head) + " of " +
                            std::to_string(params.num_heads));
  }
  if (mask.lengths.size() != 1 || mask.lengths[0] != x.dim(0)) {
    throw ShapeError("attend: mask does not describe a single sequence of " +
                     std::to_string(x.dim(0)) + " frames");
  }
  const auto proj = project(x, params);
  return head_attention(proj, params, head, 0, x.dim(0), mask, dropout,
                        dropout.key.derive(head));
}

template <std::floating_point T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const MhaParams<T>& params,
                               const AttentionMask& mask, const DropoutSpec& dropout) {
  const std::size_t batch = mask.lengths.size();
  if (batch == 0 || x.rank() != 2 || x.dim(0) % batch != 0) {
    throw ShapeError("multi_head_attention: " + to_string(x.shape()) +
                     " cannot hold " + std::to_string(batch) + " sequences");
  }
  const std::size_t rows = x.dim(0), t_max = rows / batch;
  const auto proj = project(x, params);
  std::vector<Block<T>> blocks;
  blocks.reserve(batch * params.num_heads);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = mask.lengths[b];
    if (len > t_max) {
      throw ShapeError("multi_head_attention: length " + std::to_string(len) +
                       " exceeds padded length " + std::to_string(t_max));
    }
    if (len == 0) {
      continue;
    }
    for (std::size_t h = 0; h < params.num_heads; ++h) {
      const RngKey key = dropout.key.derive(b * params.num_heads + h);
      blocks.push_back({head_attention(proj, params, h, b * t_max, len, mask, dropout, key),
                        b * t_max, h * params.head_dim});
    }
  }
  Tensor<T> heads = assemble(rows, params.num_heads * params.head_dim, blocks);
  return linear(heads, params.wo, params.bo);
}

template struct MhaParams<float>;
template struct MhaParams<double>;
template Tensor<float> attend(const Tensor<float>&, const MhaParams<float>&, std::size_t,
                              const AttentionMask&, const DropoutSpec&);
template Tensor<double> attend(const Tensor<double>&, const MhaParams<double>&, std::size_t,
                               const AttentionMask&, const DropoutSpec&);
template Tensor<float> multi_head_attention(const Tensor<float>&, const MhaParams<float>&,
                                            const AttentionMask&, const DropoutSpec&);
template Tensor<double> multi_head_attention(const Tensor<double>&, const MhaParams<double>&,
                                             const AttentionMask&, const DropoutSpec&);

}  // namespace trf
