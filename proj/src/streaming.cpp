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

#include "trfam/streaming.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace trf {

std::string rc_label(std::optional<std::size_t> rc) {
  return rc ? std::to_string(*rc) : std::string("inf");
}

std::string LookaheadReport::to_text() const {
  std::ostringstream os;
  os << "per-layer right context: " << rc_label(per_layer_rc) << " frames\n"
     << "layers: " << num_layers << '\n'
     << "frame period: " << frame_period_ms << " ms\n"
     << "frontend right context: " << frontend_right_ms << " ms\n"
     << "total lookahead: ";
  if (total_lookahead_ms) {
    os << *total_lookahead_ms << " ms (" << num_layers << " x " << *per_layer_rc << " x "
       << frame_period_ms << " + " << frontend_right_ms << ")\n";
  } else {
    os << "unbounded\n";
  }
  return os.str();
}

LookaheadReport total_lookahead(const EncoderConfig& config, std::optional<std::size_t> rc) {
  LookaheadReport r;
  r.per_layer_rc = rc;
  r.num_layers = config.num_layers;
  r.frontend_right_ms = receptive_field(config.frontend.method).right_ms;
  r.frame_period_ms = kOutputPeriodMs;
  if (rc) {
    r.total_lookahead_ms = static_cast<long>(config.num_layers * *rc) * r.frame_period_ms +
                           r.frontend_right_ms;
  } else if (config.num_layers == 0) {
    r.total_lookahead_ms = r.frontend_right_ms;
  }
  return r;
}

InputCone dependency_cone(const EncoderConfig& config, std::optional<std::size_t> rc,
                          std::size_t output_frame, std::size_t input_frames) {
  const std::size_t outputs = output_frame_count(input_frames, kInputPeriodMs);
  if (output_frame >= outputs) {
    throw std::out_of_range("dependency_cone: output frame " + std::to_string(output_frame) +
                            " of " + std::to_string(outputs));
  }
  // Attention reaches every past frame, so with any layer the cone starts at 0.
  std::size_t reach = outputs - 1;
  if (rc || config.num_layers == 0) {
    const std::size_t ahead = rc ? config.num_layers * *rc : 0;
    reach = std::min(outputs - 1, output_frame + ahead);
  }
  const long last = 2 * static_cast<long>(reach) + input_span(config.frontend.method).last;
  InputCone cone;
  if (config.num_layers == 0) {
    cone.first = static_cast<std::size_t>(
        std::max<long>(0, 2 * static_cast<long>(output_frame) +
                              input_span(config.frontend.method).first));
  }
  cone.last = static_cast<std::size_t>(std::min<long>(last, static_cast<long>(input_frames) - 1));
  return cone;
}

std::optional<std::size_t> measure_last_dependency(const AcousticModel<float>& model,
                                                   const FeatureSequence& x,
                                                   std::optional<std::size_t> rc,
                                                   std::size_t output_frame) {
  ForwardOptions opts = model.eval_options();
  opts.right_context = rc;
  const auto base = model.encode(x, opts).final;
  const std::size_t d = base.dim(1);
  auto row = [&](const Tensor<float>& z) {
    auto v = z.data();
    return std::vector<float>(v.begin() + static_cast<std::ptrdiff_t>(output_frame * d),
                              v.begin() + static_cast<std::ptrdiff_t>((output_frame + 1) * d));
  };
  const auto ref = row(base);
  for (std::size_t f = x.num_frames(); f-- > 0;) {
    FeatureSequence y = x;
    y.frames = x.frames.detach();
    for (std::size_t j = 0; j < y.dim(); ++j) {
      y.frames(f, j) += 1.0f;
    }
    if (row(model.encode(y, opts).final) != ref) {
      return f;
    }
  }
  return std::nullopt;
}

RcEvaluation eval_with_rc(const AcousticModel<float>& model,
                          std::span<const LabeledSegment> corpus, std::optional<std::size_t> rc) {
  ForwardOptions opts = model.eval_options();
  opts.right_context = rc;
  return {rc, evaluate(model, corpus, opts), total_lookahead(model.config(), rc)};
}

void write_rc_csv(const std::filesystem::path& path, std::span<const RcEvaluation> rows) {
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("cannot write " + path.string());
  }
  os << "rc,frame_error_rate,mean_ce,lookahead_ms\n";
  for (const auto& r : rows) {
    os << rc_label(r.rc) << ',' << format_double(r.metrics.frame_error_rate) << ','
       << format_double(r.metrics.mean_ce) << ',';
    if (r.lookahead.total_lookahead_ms) {
      os << *r.lookahead.total_lookahead_ms;
    } else {
      os << "inf";
    }
    os << '\n';
  }
}

}  // namespace trf
