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

#include "trfam/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "trfam/rng.hpp"

namespace trf {

namespace {

std::size_t frames_per_label(std::uint32_t frame_period_ms) {
  if (frame_period_ms == 0 || kOutputPeriodMs % frame_period_ms != 0) {
    throw std::invalid_argument("unsupported frame period " +
                                std::to_string(frame_period_ms) + " ms");
  }
  return kOutputPeriodMs / frame_period_ms;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("truncated feature file");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

FeatureSequence make_feature_sequence(Tensor<float> frames, std::uint32_t frame_period_ms,
                                      std::string utterance_id) {
  if (frames.rank() != 2 || frames.dim(1) != kFeatureDim) {
    throw ShapeError("features must be [T x 80], got " + to_string(frames.shape()));
  }
  if (frames.dim(0) == 0) {
    throw std::invalid_argument("utterance '" + utterance_id + "' has no frames");
  }
  if (frame_period_ms != 10 && frame_period_ms != 20) {
    throw std::invalid_argument("frame period must be 10 or 20 ms");
  }
  return FeatureSequence{std::move(frames), frame_period_ms, std::move(utterance_id)};
}

std::size_t output_frame_count(std::size_t num_frames, std::uint32_t frame_period_ms) {
  const std::size_t k = frames_per_label(frame_period_ms);
  return (num_frames + k - 1) / k;
}

FeatureSequence stack_stride(const FeatureSequence& x, std::size_t n_stack,
                             std::size_t stride) {
  if (n_stack < 1 || stride < 1) {
    throw std::invalid_argument("stack_stride: n_stack and stride must be >= 1");
  }
  if (!x.frames.defined() || x.num_frames() == 0) {
    throw std::invalid_argument("stack_stride: empty input");
  }
  const std::size_t t_in = x.num_frames(), d = x.dim();
  const std::size_t t_out = (t_in + stride - 1) / stride;
  Tensor<float> out(Shape{t_out, n_stack * d});
  auto src = x.frames.data();
  auto dst = out.data();
  for (std::size_t t = 0; t < t_out; ++t) {
    for (std::size_t j = 0; j < n_stack; ++j) {
      const std::size_t s = std::min(t * stride + j, t_in - 1);
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(s * d), d,
                  dst.begin() + static_cast<std::ptrdiff_t>((t * n_stack + j) * d));
    }
  }
  return FeatureSequence{std::move(out),
                         x.frame_period_ms * static_cast<std::uint32_t>(stride),
                         x.utterance_id};
}

FeatureSequence unstack(const FeatureSequence& x, std::size_t n, std::size_t original_frames) {
  if (n < 1 || x.dim() % n != 0) {
    throw std::invalid_argument("unstack: dimension not divisible by n");
  }
  const std::size_t d = x.dim() / n;
  if (original_frames > x.num_frames() * n) {
    throw std::invalid_argument("unstack: too few stacked frames");
  }
  Tensor<float> out(Shape{original_frames, d});
  auto src = x.frames.data();
  std::copy_n(src.begin(), original_frames * d, out.data().begin());
  return FeatureSequence{std::move(out), x.frame_period_ms / static_cast<std::uint32_t>(n),
                         x.utterance_id};
}

double CellMask::fraction() const {
  if (masked.empty()) {
    return 0.0;
  }
  const auto n = std::count(masked.begin(), masked.end(), std::uint8_t{1});
  return static_cast<double>(n) / static_cast<double>(masked.size());
}

CellMask draw_spec_augment_mask(std::size_t frames, std::size_t dim,
                                const SpecAugmentPolicy& policy, std::mt19937_64& rng) {
  CellMask mask{frames, dim, std::vector<std::uint8_t>(frames * dim, 0)};
  const std::size_t max_f = std::min(policy.max_freq_width, dim);
  for (std::size_t m = 0; m < policy.num_freq_masks && max_f > 0; ++m) {
    const std::size_t width = std::uniform_int_distribution<std::size_t>(0, max_f)(rng);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, dim - width)(rng);
    for (std::size_t t = 0; t < frames; ++t) {
      std::fill_n(mask.masked.begin() + static_cast<std::ptrdiff_t>(t * dim + start), width,
                  std::uint8_t{1});
    }
  }
  const auto frac_cap = static_cast<std::size_t>(
      std::floor(policy.max_time_fraction * static_cast<double>(frames)));
  const std::size_t max_t = std::min({policy.max_time_width, frames, frac_cap});
  for (std::size_t m = 0; m < policy.num_time_masks && max_t > 0; ++m) {
    const std::size_t width = std::uniform_int_distribution<std::size_t>(0, max_t)(rng);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, frames - width)(rng);
    std::fill_n(mask.masked.begin() + static_cast<std::ptrdiff_t>(start * dim), width * dim,
                std::uint8_t{1});
  }
  return mask;
}

FeatureSequence spec_augment(const FeatureSequence& x, const SpecAugmentPolicy& policy,
                             std::mt19937_64& rng) {
  FeatureSequence out{x.frames.detach(), x.frame_period_ms, x.utterance_id};
  if (policy.is_noop()) {
    return out;
  }
  const CellMask mask = draw_spec_augment_mask(x.num_frames(), x.dim(), policy, rng);
  auto v = out.frames.data();
  double total = 0;
  for (float f : v) {
    total += f;
  }
  const auto mean = static_cast<float>(total / static_cast<double>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask.masked[i]) {
      v[i] = mean;
    }
  }
  return out;
}

std::vector<LabeledSegment> segment(const FeatureSequence& x, std::span<const int> labels,
                                    double max_sec) {
  const std::size_t per_label = frames_per_label(x.frame_period_ms);
  const std::size_t t_in = x.num_frames();
  if (labels.size() != output_frame_count(t_in, x.frame_period_ms)) {
    throw std::invalid_argument("segment: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(t_in) + " frames (" +
                                std::to_string(x.frame_period_ms) + " ms) in '" +
                                x.utterance_id + "'");
  }
  const auto max_frames_raw =
      static_cast<std::size_t>(std::floor(max_sec * 1000.0 / x.frame_period_ms + 1e-9));
  const std::size_t max_frames = max_frames_raw / per_label * per_label;
  if (max_frames == 0) {
    throw std::invalid_argument("segment: max_sec shorter than one output frame");
  }
  const std::size_t d = x.dim();
  auto src = x.frames.data();
  std::vector<LabeledSegment> out;
  for (std::size_t start = 0, index = 0; start < t_in; start += max_frames, ++index) {
    const std::size_t len = std::min(max_frames, t_in - start);
    Tensor<float> frames(Shape{len, d});
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(start * d), len * d,
                frames.data().begin());
    const std::size_t l0 = start / per_label;
    const std::size_t nl = output_frame_count(len, x.frame_period_ms);
    LabeledSegment seg;
    seg.features = FeatureSequence{std::move(frames), x.frame_period_ms,
                                   x.utterance_id + "-" + std::to_string(index)};
    seg.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(l0),
                      labels.begin() + static_cast<std::ptrdiff_t>(l0 + nl));
    out.push_back(std::move(seg));
  }
  return out;
}

void write_features(const std::filesystem::path& path, const FeatureSequence& seq) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  os.write(kFeatureMagic, 4);
  put_u32(os, kFeatureVersion);
  put_u32(os, static_cast<std::uint32_t>(seq.num_frames()));
  put_u32(os, static_cast<std::uint32_t>(seq.dim()));
  put_u32(os, seq.frame_period_ms);
  for (float v : seq.frames.data()) {
    put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) {
    throw std::runtime_error("write failed: " + path.string());
  }
}

FeatureSequence read_features(const std::filesystem::path& path, std::string utterance_id) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("cannot open " + path.string());
  }
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw std::runtime_error(path.string() + ": not a feature file");
  }
  const std::uint32_t version = get_u32(is);
  if (version != kFeatureVersion) {
    throw std::runtime_error(path.string() + ": unsupported version " +
                             std::to_string(version));
  }
  const std::uint32_t t = get_u32(is);
  const std::uint32_t dim = get_u32(is);
  const std::uint32_t period = get_u32(is);
  if (dim != kFeatureDim) {
    throw std::runtime_error(path.string() + ": feature dimension " + std::to_string(dim) +
                             ", expected 80");
  }
  std::vector<float> values(static_cast<std::size_t>(t) * dim);
  for (auto& v : values) {
    v = std::bit_cast<float>(get_u32(is));
  }
  return make_feature_sequence(Tensor<float>(Shape{t, dim}, std::move(values)), period,
                               std::move(utterance_id));
}

void write_labels(const std::filesystem::path& path, std::span<const int> labels) {
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  for (int l : labels) {
    os << l << '\n';
  }
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::vector<int> labels;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) {
      continue;
    }
    std::size_t pos = 0;
    const int v = std::stoi(line, &pos);
    if (line.find_first_not_of(" \t\r", pos) != std::string::npos) {
      throw std::runtime_error(path.string() + ": malformed label line '" + line + "'");
    }
    labels.push_back(v);
  }
  return labels;
}

void write_corpus(const std::filesystem::path& dir, const std::vector<LabeledSegment>& utts) {
  std::filesystem::create_directories(dir);
  std::ofstream list(dir / "utts.list");
  for (const auto& u : utts) {
    const auto& id = u.features.utterance_id;
    write_features(dir / (id + ".feat"), u.features);
    write_labels(dir / (id + ".lab"), u.labels);
    list << id << '\n';
  }
  if (!list) {
    throw std::runtime_error("write failed: " + (dir / "utts.list").string());
  }
}

std::vector<LabeledSegment> read_corpus(const std::filesystem::path& dir) {
  std::ifstream list(dir / "utts.list");
  if (!list) {
    throw std::runtime_error("no utts.list in " + dir.string());
  }
  std::vector<LabeledSegment> out;
  std::string id;
  while (std::getline(list, id)) {
    if (id.empty()) {
      continue;
    }
    LabeledSegment u;
    u.features = read_features(dir / (id + ".feat"), id);
    u.labels = read_labels(dir / (id + ".lab"));
    if (u.labels.size() != output_frame_count(u.features.num_frames(),
                                              u.features.frame_period_ms)) {
      throw std::runtime_error("utterance '" + id + "': " + std::to_string(u.labels.size()) +
                               " labels for " + std::to_string(u.features.num_frames()) +
                               " frames");
    }
    out.push_back(std::move(u));
  }
  return out;
}

ToyTask::ToyTask(std::size_t num_labels, std::uint64_t seed) : num_labels_(num_labels) {
  if (num_labels < 2) {
    throw std::invalid_argument("toy task needs at least 2 labels");
  }
  std::mt19937_64 rng(mix64(seed));
  const std::size_t k = num_labels;
  transitions_.assign(k * k, 0.0);
  std::uniform_real_distribution<double> weight(0.2, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  for (std::size_t i = 0; i < k; ++i) {
    // Successor i+1 keeps the chain irreducible; three more are random.
    std::vector<std::pair<std::size_t, double>> succ{{(i + 1) % k, weight(rng)}};
    for (int s = 0; s < 3; ++s) {
      succ.emplace_back(pick(rng), weight(rng));
    }
    double total = 0;
    for (auto& [j, w] : succ) {
      total += w;
    }
    transitions_[i * k + i] += kSelfLoop;
    for (auto& [j, w] : succ) {
      transitions_[i * k + j] += (1.0 - kSelfLoop) * w / total;
    }
  }
  std::normal_distribution<float> normal(0.0f, 1.0f);
  prototypes_.resize(k * kFeatureDim);
  for (auto& p : prototypes_) {
    p = normal(rng);
  }
}

std::vector<int> ToyTask::sample_labels(std::size_t length, std::mt19937_64& rng) const {
  std::vector<int> labels(length);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t state = std::uniform_int_distribution<std::size_t>(0, num_labels_ - 1)(rng);
  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0) {
      const double r = u(rng);
      double acc = 0;
      std::size_t next = num_labels_ - 1;
      for (std::size_t j = 0; j < num_labels_; ++j) {
        acc += transition(state, j);
        if (r < acc) {
          next = j;
          break;
        }
      }
      state = next;
    }
    labels[t] = static_cast<int>(state);
  }
  return labels;
}

LabeledSegment ToyTask::sample_utterance(std::size_t num_label_frames, std::mt19937_64& rng,
                                         std::string utterance_id) const {
  LabeledSegment utt;
  utt.labels = sample_labels(num_label_frames, rng);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> offset(kFeatureDim);
  for (auto& o : offset) {
    o = static_cast<float>(kOffsetStd) * normal(rng);
  }
  const std::size_t per_label = kOutputPeriodMs / kInputPeriodMs;
  const std::size_t t = num_label_frames * per_label;
  Tensor<float> frames(Shape{t, kFeatureDim});
  auto v = frames.data();
  for (std::size_t i = 0; i < t; ++i) {
    const auto label = static_cast<std::size_t>(utt.labels[i / per_label]);
    for (std::size_t d = 0; d < kFeatureDim; ++d) {
      v[i * kFeatureDim + d] = prototypes_[label * kFeatureDim + d] + offset[d] +
                               static_cast<float>(kNoiseStd) * normal(rng);
    }
  }
  utt.features = make_feature_sequence(std::move(frames), kInputPeriodMs,
                                       std::move(utterance_id));
  return utt;
}

std::vector<LabeledSegment> generate_toy_corpus(const ToyCorpusOptions& options,
                                                std::uint64_t stream) {
  if (options.min_sec <= 0 || options.max_sec < options.min_sec) {
    throw std::invalid_argument("toy corpus: need 0 < min_sec <= max_sec");
  }
  const ToyTask task(options.num_labels, options.seed);
  std::mt19937_64 rng(mix64(options.seed ^ mix64(stream + 1)));
  const auto min_frames = static_cast<std::size_t>(std::lround(options.min_sec * 50.0));
  const auto max_frames = static_cast<std::size_t>(std::lround(options.max_sec * 50.0));
  std::vector<LabeledSegment> out;
  out.reserve(options.num_utts);
  for (std::size_t i = 0; i < options.num_utts; ++i) {
    const std::size_t len = std::max<std::size_t>(
        1, std::uniform_int_distribution<std::size_t>(min_frames, max_frames)(rng));
    std::ostringstream id;
    id << "utt" << std::setw(5) << std::setfill('0') << i;
    out.push_back(task.sample_utterance(len, rng, id.str()));
  }
  return out;
}

}  // namespace trf
