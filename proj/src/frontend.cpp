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

#include "trfam/frontend.hpp"

#include <cmath>
#include <stdexcept>

namespace trf {

std::string_view to_string(FrontendMethod method) {
  switch (method) {
    case FrontendMethod::kNone:
      return "none";
    case FrontendMethod::kSinusoid:
      return "sinusoid";
    case FrontendMethod::kFrameStacking:
      return "frame_stacking";
    case FrontendMethod::kConvolution:
      return "convolution";
  }
  return "unknown";
}

std::optional<FrontendMethod> parse_frontend_method(std::string_view text) {
  for (auto m : {FrontendMethod::kNone, FrontendMethod::kSinusoid,
                 FrontendMethod::kFrameStacking, FrontendMethod::kConvolution}) {
    if (text == to_string(m)) {
      return m;
    }
  }
  if (text == "vgg") {
    return FrontendMethod::kConvolution;
  }
  if (text == "fs") {
    return FrontendMethod::kFrameStacking;
  }
  return std::nullopt;
}

std::size_t projection_input_dim(const FrontendConfig& config) {
  switch (config.method) {
    case FrontendMethod::kNone:
    case FrontendMethod::kSinusoid:
      return 2 * kFeatureDim;
    case FrontendMethod::kFrameStacking:
      return kFrameStackingWindow * kFeatureDim;
    case FrontendMethod::kConvolution:
      return config.block2_channels * (kFeatureDim / 2);
  }
  return 0;
}

FrameSpan input_span(FrontendMethod method) {
  switch (method) {
    case FrontendMethod::kNone:
    case FrontendMethod::kSinusoid:
      return {0, 1};
    case FrontendMethod::kFrameStacking:
      return {0, static_cast<long>(kFrameStackingWindow) - 1};
    case FrontendMethod::kConvolution:
      // conv, conv: +-2 frames; pool (2t'-1, 2t'); conv, conv at 20 ms: +-2
      // output frames; pool (t, t+1).
      return {-7, 8};
  }
  return {};
}

ReceptiveField receptive_field(FrontendMethod method) {
  const FrameSpan span = input_span(method);
  const long period = kInputPeriodMs;
  return {period - period * span.first, period * span.last};
}

PositionalEmbeddingTable::PositionalEmbeddingTable(std::size_t max_frames, std::size_t dim)
    : max_frames_(0), dim_(dim) {
  extend(max_frames);
}

double PositionalEmbeddingTable::value(std::size_t t, std::size_t i, std::size_t dim) {
  const std::size_t even = i - (i % 2);
  const double angle = static_cast<double>(t) /
                       std::pow(10000.0, static_cast<double>(even) / static_cast<double>(dim));
  return i % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

void PositionalEmbeddingTable::extend(std::size_t frames) {
  if (frames <= max_frames_) {
    return;
  }
  values_.resize(frames * dim_);
  for (std::size_t t = max_frames_; t < frames; ++t) {
    for (std::size_t i = 0; i < dim_; ++i) {
      values_[t * dim_ + i] = value(t, i, dim_);
    }
  }
  max_frames_ = frames;
}

template <std::floating_point T>
Tensor<T> PositionalEmbeddingTable::rows(std::size_t frames) const {
  if (frames > max_frames_) {
    PositionalEmbeddingTable bigger = *this;
    bigger.extend(frames);
    return bigger.rows<T>(frames);
  }
  std::vector<T> v(values_.begin(),
                   values_.begin() + static_cast<std::ptrdiff_t>(frames * dim_));
  return Tensor<T>(Shape{frames, dim_}, std::move(v));
}

template <std::floating_point T>
Frontend<T>::Frontend(const FrontendConfig& config, std::size_t model_dim,
                      ParameterSet<T>& params)
    : config_(config), model_dim_(model_dim), table_(500, model_dim) {
  if (config.method == FrontendMethod::kConvolution) {
    const std::size_t c1 = config.block1_channels, c2 = config.block2_channels;
    if (c1 == 0 || c2 == 0) {
      throw std::invalid_argument("VGG channel counts must be positive");
    }
    const std::size_t in[4] = {1, c1, c1, c2};
    const std::size_t out[4] = {c1, c1, c2, c2};
    for (int k = 0; k < 4; ++k) {
      const std::string name = "frontend.conv" + std::to_string(k + 1);
      conv_w_[k] = params.add(name + ".weight", Shape{out[k], in[k], 3, 3}, Init::kHe);
      conv_b_[k] = params.add(name + ".bias", Shape{out[k]}, Init::kZeros);
    }
  }
  proj_w_ = params.add("frontend.proj.weight", Shape{model_dim, projection_input_dim(config)},
                       Init::kTruncatedNormal);
  proj_b_ = params.add("frontend.proj.bias", Shape{model_dim}, Init::kZeros);
}

namespace {

void check_input(const FeatureSequence& x) {
  if (x.frame_period_ms != kInputPeriodMs || x.dim() != kFeatureDim) {
    throw ShapeError("frontend expects 80-dim features at 10 ms, got " +
                     to_string(x.frames.shape()) + " at " +
                     std::to_string(x.frame_period_ms) + " ms");
  }
}

}  // namespace

template <std::floating_point T>
Tensor<T> Frontend<T>::vgg(const FeatureSequence& x) const {
  const std::size_t t = x.num_frames(), f = x.dim();
  // [T x F] -> [1 x F x T]
  Tensor<T> image(Shape{1, f, t});
  {
    auto src = x.frames.data();
    auto dst = image.data();
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        dst[j * t + i] = static_cast<T>(src[i * f + j]);
      }
    }
  }
  auto conv = [&](const Tensor<T>& in, int k) {
    return relu(conv2d(in, conv_w_[k], conv_b_[k], PadMode::kZero, PadMode::kReplicate));
  };
  Tensor<T> h = conv(conv(image, 0), 1);
  h = maxpool2d(pad_replicate(h, 2, 1, 0), 2, 2);
  h = conv(conv(h, 2), 3);
  h = maxpool2d(pad_replicate(pad_replicate(h, 1, 0, 1), 2, 0, 1), 1, 1);
  return frames_from_channels(h);
}

template <std::floating_point T>
Tensor<T> Frontend<T>::features(const FeatureSequence& x) const {
  check_input(x);
  switch (config_.method) {
    case FrontendMethod::kNone:
    case FrontendMethod::kSinusoid:
      return cast<T>(stack_stride(x, 2, 2).frames);
    case FrontendMethod::kFrameStacking:
      return cast<T>(stack_stride(x, kFrameStackingWindow, 2).frames);
    case FrontendMethod::kConvolution:
      return vgg(x);
  }
  throw std::logic_error("unknown frontend method");
}

template <std::floating_point T>
Tensor<T> Frontend<T>::forward(const FeatureSequence& x) const {
  Tensor<T> h = linear(features(x), proj_w_, proj_b_);
  if (config_.method == FrontendMethod::kSinusoid) {
    h = add(h, table_.rows<T>(h.dim(0)));
  }
  return h;
}

template Tensor<float> PositionalEmbeddingTable::rows<float>(std::size_t) const;
template Tensor<double> PositionalEmbeddingTable::rows<double>(std::size_t) const;
template class Frontend<float>;
template class Frontend<double>;

}  // namespace trf
