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

#include "trfam/encoder.hpp"

#include <algorithm>
#include <stdexcept>

namespace trf {

namespace {

// Dropout sites inside one layer.
constexpr std::uint64_t kSiteAttention = 0;
constexpr std::uint64_t kSiteMha = 1;
constexpr std::uint64_t kSiteFfn = 2;

}  // namespace

template <std::floating_point T>
LayerNormParams<T> LayerNormParams<T>::allocate(ParameterSet<T>& params,
                                                const std::string& prefix, std::size_t dim) {
  return {params.add(prefix + "gamma", Shape{dim}, Init::kOnes),
          params.add(prefix + "beta", Shape{dim}, Init::kZeros)};
}

template <std::floating_point T>
TransformerLayerParams<T> TransformerLayerParams<T>::allocate(ParameterSet<T>& params,
                                                              const std::string& prefix,
                                                              const EncoderConfig& config) {
  const std::size_t d = config.model_dim, ffn = config.ffn_dim;
  TransformerLayerParams p;
  p.ln1 = LayerNormParams<T>::allocate(params, prefix + "ln1.", d);
  p.mha = MhaParams<T>::allocate(params, prefix + "mha.", d, config.num_heads, kHeadDim,
                                 config.beta_denominator);
  p.ln2 = LayerNormParams<T>::allocate(params, prefix + "ln2.", d);
  p.fc1_w = params.add(prefix + "fc1.weight", Shape{ffn, d}, Init::kTruncatedNormal);
  p.fc1_b = params.add(prefix + "fc1.bias", Shape{ffn}, Init::kZeros);
  p.fc2_w = params.add(prefix + "fc2.weight", Shape{d, ffn}, Init::kTruncatedNormal);
  p.fc2_b = params.add(prefix + "fc2.bias", Shape{d}, Init::kZeros);
  p.ln3 = LayerNormParams<T>::allocate(params, prefix + "ln3.", d);
  return p;
}

template <std::floating_point T>
Tensor<T> transformer_layer(const Tensor<T>& x, const TransformerLayerParams<T>& p,
                            const AttentionMask& mask, const LayerContext& ctx) {
  const T eps = static_cast<T>(ctx.layernorm_eps);
  const DropoutSpec attn_dropout{ctx.dropout, ctx.mode, ctx.key.derive(kSiteAttention)};

  Tensor<T> h = layernorm(x, p.ln1.gamma, p.ln1.beta, eps);
  h = multi_head_attention(h, p.mha, mask, attn_dropout);
  h = dropout(h, ctx.dropout, ctx.mode, ctx.key.derive(kSiteMha));
  const Tensor<T> y1 = add(x, h);

  h = layernorm(y1, p.ln2.gamma, p.ln2.beta, eps);
  h = linear(gelu(linear(h, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b);
  h = dropout(h, ctx.dropout, ctx.mode, ctx.key.derive(kSiteFfn));
  const Tensor<T> y2 = add(y1, h);

  return ctx.use_ln3 ? layernorm(y2, p.ln3.gamma, p.ln3.beta, eps) : y2;
}

template <std::floating_point T>
Tensor<T> EncodeOutput<T>::sequence(const Tensor<T>& packed, std::size_t b) const {
  if (b >= batch()) {
    throw std::out_of_range("sequence index " + std::to_string(b) + " of " +
                            std::to_string(batch()));
  }
  auto src = packed.data();
  const std::size_t cols = packed.dim(1);
  const auto begin = src.begin() + static_cast<std::ptrdiff_t>(b * max_length * cols);
  std::vector<T> v(begin, begin + static_cast<std::ptrdiff_t>(lengths[b] * cols));
  return Tensor<T>(Shape{lengths[b], cols}, std::move(v));
}

PackedTargets pack_targets(std::span<const std::vector<int>* const> labels,
                           std::span<const std::size_t> lengths, std::size_t max_length) {
  if (labels.size() != lengths.size()) {
    throw std::invalid_argument("pack_targets: " + std::to_string(labels.size()) +
                                " label sequences for " + std::to_string(lengths.size()) +
                                " encoded sequences");
  }
  PackedTargets out;
  out.targets.assign(labels.size() * max_length, 0);
  out.valid.assign(labels.size() * max_length, 0);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b]->size() != lengths[b]) {
      throw ShapeError("sequence " + std::to_string(b) + " has " +
                       std::to_string(labels[b]->size()) + " labels for " +
                       std::to_string(lengths[b]) + " output frames");
    }
    for (std::size_t t = 0; t < lengths[b]; ++t) {
      out.targets[b * max_length + t] = (*labels[b])[t];
      out.valid[b * max_length + t] = 1;
    }
    out.valid_frames += lengths[b];
  }
  return out;
}

template <std::floating_point T>
Tensor<T> interpolate_losses(const Tensor<T>& final_logits,
                             const std::vector<Tensor<T>>& aux_logits,
                             const PackedTargets& targets, double weight) {
  Tensor<T> total = cross_entropy(final_logits, targets.targets, targets.valid);
  for (const auto& logits : aux_logits) {
    total = add(total, scale(cross_entropy(logits, targets.targets, targets.valid),
                             static_cast<T>(weight)));
  }
  return total;
}

ParameterCount count_parameters(const EncoderConfig& config) {
  const std::size_t d = config.model_dim, k = config.num_outputs;
  ParameterCount c;

  std::size_t frontend = projection_input_dim(config.frontend) * d + d;
  if (config.frontend.method == FrontendMethod::kConvolution) {
    const std::size_t c1 = config.frontend.block1_channels, c2 = config.frontend.block2_channels;
    const std::size_t in[4] = {1, c1, c1, c2};
    const std::size_t out[4] = {c1, c1, c2, c2};
    for (int i = 0; i < 4; ++i) {
      frontend += out[i] * in[i] * 9 + out[i];
    }
  }
  const std::size_t inner = config.num_heads * kHeadDim;
  const std::size_t mha = 3 * (inner * d + inner) + d * inner + d;
  const std::size_t ffn = config.ffn_dim * d + config.ffn_dim + d * config.ffn_dim + d;
  const std::size_t layer = mha + ffn + 3 * 2 * d;
  const std::size_t layers = config.num_layers * layer;
  const std::size_t output = k * d + k;

  c.breakdown.emplace_back("frontend", frontend);
  c.breakdown.emplace_back("transformer layers", layers);
  c.breakdown.emplace_back("output head", output);
  c.inference = frontend + layers + output;
  if (config.iterated_loss) {
    const std::size_t p = config.iterated_loss->proj_dim;
    const std::size_t head = p * d + p + k * p + k;
    c.training_only = config.iterated_loss->tap_layers.size() * head;
    c.breakdown.emplace_back("auxiliary heads", c.training_only);
  }
  return c;
}

template <std::floating_point T>
AcousticModel<T>::AcousticModel(const EncoderConfig& config, bool with_aux_heads)
    : config_((config.validate(), config)),
      frontend_(config.frontend, config.model_dim, params_) {
  layers_.reserve(config.num_layers);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    layers_.push_back(TransformerLayerParams<T>::allocate(
        params_, "layer" + std::to_string(l + 1) + ".", config));
  }
  out_w_ = params_.add("output.weight", Shape{config.num_outputs, config.model_dim},
                       Init::kTruncatedNormal);
  out_b_ = params_.add("output.bias", Shape{config.num_outputs}, Init::kZeros);
  if (with_aux_heads && config.iterated_loss) {
    const std::size_t p = config.iterated_loss->proj_dim;
    for (auto layer : config.iterated_loss->tap_layers) {
      const std::string prefix = "aux" + std::to_string(layer) + ".";
      AuxHeadParams<T> head;
      head.layer = layer;
      head.proj_w = params_.add(prefix + "proj.weight", Shape{p, config.model_dim},
                                Init::kTruncatedNormal, true);
      head.proj_b = params_.add(prefix + "proj.bias", Shape{p}, Init::kZeros, true);
      head.out_w = params_.add(prefix + "out.weight", Shape{config.num_outputs, p},
                               Init::kTruncatedNormal, true);
      head.out_b = params_.add(prefix + "out.bias", Shape{config.num_outputs}, Init::kZeros,
                               true);
      aux_.push_back(std::move(head));
    }
  }
}

template <std::floating_point T>
AcousticModel<T> AcousticModel<T>::clone() const {
  AcousticModel copy(config_, has_aux_heads());
  copy.copy_values_from(*this);
  return copy;
}

template <std::floating_point T>
void AcousticModel<T>::copy_values_from(const AcousticModel& other, bool require_aux) {
  for (auto& p : params_.items()) {
    const auto* src = other.parameters().find(p.name);
    if (!src) {
      if (p.training_only && !require_aux) {
        continue;
      }
      throw std::invalid_argument("copy_values_from: no parameter named " + p.name);
    }
    if (src->value.shape() != p.value.shape()) {
      throw ShapeError("copy_values_from: " + p.name + " is " +
                       to_string(src->value.shape()) + ", expected " +
                       to_string(p.value.shape()));
    }
    auto from = src->value.data();
    std::copy(from.begin(), from.end(), p.value.data().begin());
  }
}

template <std::floating_point T>
ForwardOptions AcousticModel<T>::eval_options() const {
  ForwardOptions o;
  o.mode = Mode::kEval;
  o.right_context = config_.right_context;
  return o;
}

template <std::floating_point T>
ForwardOptions AcousticModel<T>::train_options(RngKey key) const {
  ForwardOptions o;
  o.mode = Mode::kTrain;
  o.key = key;
  o.right_context = config_.right_context;
  return o;
}

template <std::floating_point T>
EncodeOutput<T> AcousticModel<T>::encode(std::span<const FeatureSequence* const> batch,
                                         const ForwardOptions& options) const {
  if (batch.empty()) {
    throw std::invalid_argument("encode: empty batch");
  }
  EncodeOutput<T> out;
  std::vector<Tensor<T>> fronts;
  fronts.reserve(batch.size());
  for (const auto* x : batch) {
    fronts.push_back(frontend_.forward(*x));
    out.lengths.push_back(fronts.back().dim(0));
    out.max_length = std::max(out.max_length, fronts.back().dim(0));
  }
  Tensor<T> h;
  if (batch.size() == 1) {
    h = fronts[0];
  } else {
    std::vector<Block<T>> blocks;
    for (std::size_t b = 0; b < fronts.size(); ++b) {
      blocks.push_back({fronts[b], b * out.max_length, 0});
    }
    h = assemble(batch.size() * out.max_length, config_.model_dim, blocks);
  }

  const AttentionMask mask{out.lengths, options.right_context};
  std::vector<bool> is_tap(config_.num_layers + 1, false);
  if (config_.iterated_loss) {
    for (auto l : config_.iterated_loss->tap_layers) {
      is_tap[l] = true;
    }
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    LayerContext ctx;
    ctx.dropout = config_.dropout;
    ctx.mode = options.mode;
    ctx.key = options.key.derive(l);
    ctx.layernorm_eps = config_.layernorm_eps;
    ctx.use_ln3 = options.use_ln3;
    h = transformer_layer(h, layers_[l], mask, ctx);
    if (is_tap[l + 1]) {
      out.taps.emplace(l + 1, h);
    }
  }
  out.final = h;
  return out;
}

template <std::floating_point T>
EncodeOutput<T> AcousticModel<T>::encode(const FeatureSequence& x,
                                         const ForwardOptions& options) const {
  const FeatureSequence* one[] = {&x};
  return encode(std::span<const FeatureSequence* const>(one), options);
}

template <std::floating_point T>
Tensor<T> AcousticModel<T>::output_head(const Tensor<T>& z) const {
  return linear(z, out_w_, out_b_);
}

template <std::floating_point T>
Tensor<T> AcousticModel<T>::aux_logits(std::size_t head, const Tensor<T>& tap) const {
  const auto& a = aux_.at(head);
  return linear(relu(linear(tap, a.proj_w, a.proj_b)), a.out_w, a.out_b);
}

template <std::floating_point T>
LossBreakdown<T> AcousticModel<T>::loss(const EncodeOutput<T>& encoded,
                                        const PackedTargets& targets) const {
  LossBreakdown<T> out;
  out.frames = targets.valid_frames;
  const Tensor<T> logits = output_head(encoded.final);
  std::vector<Tensor<T>> aux;
  if (config_.iterated_loss && has_aux_heads()) {
    for (std::size_t j = 0; j < aux_.size(); ++j) {
      const auto tap = encoded.taps.find(aux_[j].layer);
      if (tap == encoded.taps.end()) {
        throw std::invalid_argument("loss: no activation captured at layer " +
                                    std::to_string(aux_[j].layer));
      }
      aux.push_back(aux_logits(j, tap->second));
    }
  }
  const double weight = config_.iterated_loss ? config_.iterated_loss->weight : 0.0;
  // Same op sequence as interpolate_losses, keeping the per-head terms.
  out.total = cross_entropy(logits, targets.targets, targets.valid);
  out.final_ce = static_cast<double>(out.total.item());
  for (const auto& a : aux) {
    const Tensor<T> ce = cross_entropy(a, targets.targets, targets.valid);
    out.aux_ce.push_back(static_cast<double>(ce.item()));
    out.total = add(out.total, scale(ce, static_cast<T>(weight)));
  }
  return out;
}

template struct LayerNormParams<float>;
template struct LayerNormParams<double>;
template struct TransformerLayerParams<float>;
template struct TransformerLayerParams<double>;
template struct EncodeOutput<float>;
template struct EncodeOutput<double>;
template class AcousticModel<float>;
template class AcousticModel<double>;
template Tensor<float> transformer_layer(const Tensor<float>&,
                                         const TransformerLayerParams<float>&,
                                         const AttentionMask&, const LayerContext&);
template Tensor<double> transformer_layer(const Tensor<double>&,
                                          const TransformerLayerParams<double>&,
                                          const AttentionMask&, const LayerContext&);
template Tensor<float> interpolate_losses(const Tensor<float>&, const std::vector<Tensor<float>>&,
                                          const PackedTargets&, double);
template Tensor<double> interpolate_losses(const Tensor<double>&,
                                           const std::vector<Tensor<double>>&,
                                           const PackedTargets&, double);

}  // namespace trf
