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


#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <numeric>

#include "trfam/features.hpp"
#include "util.hpp"

namespace trf {
namespace {

using test::random_features;

std::vector<float> values(const FeatureSequence& x) {
  return {x.frames.data().begin(), x.frames.data().end()};
}

TEST(Features, IngestionValidates) {
  EXPECT_THROW(make_feature_sequence(Tensor<float>({4, 40}), 10, "a"), ShapeError);
  EXPECT_THROW(make_feature_sequence(Tensor<float>({0, 80}), 10, "a"), std::invalid_argument);
  EXPECT_THROW(make_feature_sequence(Tensor<float>({4, 80}), 15, "a"), std::invalid_argument);
  auto x = make_feature_sequence(Tensor<float>({250, 80}), 10, "a");
  EXPECT_DOUBLE_EQ(x.duration_sec(), 2.5);
}

TEST(Features, OutputFrameCount) {
  EXPECT_EQ(output_frame_count(100, 10), 50u);
  EXPECT_EQ(output_frame_count(101, 10), 51u);
  EXPECT_EQ(output_frame_count(1, 10), 1u);
  EXPECT_EQ(output_frame_count(7, 20), 7u);
}

TEST(Features, StackStrideLayoutAndEndPadding) {
  auto x = random_features(5, 1);
  auto s = stack_stride(x, 3, 2);
  ASSERT_EQ(s.num_frames(), 3u);
  ASSERT_EQ(s.dim(), 240u);
  EXPECT_EQ(s.frame_period_ms, 20u);
  // Output frame 2 covers inputs 4, 5, 6; 5 and 6 repeat input 4.
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t d = 0; d < 80; ++d) {
      EXPECT_EQ(s.frames(2, j * 80 + d), x.frames(4, d));
      EXPECT_EQ(s.frames(0, j * 80 + d), x.frames(j, d));
    }
  }
}

TEST(Features, StackUnstackRoundTrip) {
  for (std::size_t t : {1u, 7u, 10u, 33u}) {
    for (std::size_t n : {1u, 2u, 3u}) {
      auto x = random_features(t, t * 10 + n);
      auto back = unstack(stack_stride(x, n, n), n, t);
      EXPECT_EQ(values(back), values(x));
      EXPECT_EQ(back.frame_period_ms, x.frame_period_ms);
    }
  }
}

TEST(Features, SpecAugmentKeepsShapeAndFillsWithMean) {
  auto x = random_features(300, 2);
  double mean = 0;
  for (float v : x.frames.data()) mean += v;
  mean /= static_cast<double>(x.frames.size());
  std::mt19937_64 rng(3);
  auto y = spec_augment(x, SpecAugmentPolicy{}, rng);
  ASSERT_EQ(y.frames.shape(), x.frames.shape());
  std::size_t changed = 0;
  for (std::size_t i = 0; i < x.frames.size(); ++i) {
    if (y.frames.data()[i] != x.frames.data()[i]) {
      ++changed;
      EXPECT_FLOAT_EQ(y.frames.data()[i], static_cast<float>(mean));
    }
  }
  EXPECT_GT(changed, 0u);
}

TEST(Features, SpecAugmentMaskGeometry) {
  SpecAugmentPolicy p{2, 27, 2, 100, 1.0};
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t frames = 20 + static_cast<std::size_t>(trial) * 3;
    auto m = draw_spec_augment_mask(frames, 80, p, rng);
    // Frequency bands: columns masked in every frame. At most 54 of them.
    std::size_t full_cols = 0;
    for (std::size_t c = 0; c < 80; ++c) {
      bool all = true;
      for (std::size_t t = 0; t < frames && all; ++t) all = m.masked[t * 80 + c] != 0;
      full_cols += all;
    }
    std::size_t full_rows = 0;
    for (std::size_t t = 0; t < frames; ++t) {
      bool all = true;
      for (std::size_t c = 0; c < 80 && all; ++c) all = m.masked[t * 80 + c] != 0;
      full_rows += all;
    }
    // Every masked cell lies in a full row or a full column.
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t c = 0; c < 80; ++c) {
        if (!m.masked[t * 80 + c]) continue;
        bool row = true, col = true;
        for (std::size_t k = 0; k < 80 && row; ++k) row = m.masked[t * 80 + k] != 0;
        for (std::size_t k = 0; k < frames && col; ++k) col = m.masked[k * 80 + c] != 0;
        ASSERT_TRUE(row || col);
      }
    }
    if (full_rows < frames) {
      EXPECT_LE(full_cols, 54u);
    }
    if (full_cols < 80) {
      EXPECT_LE(full_rows, std::min<std::size_t>(200, frames));
    }
  }
}

TEST(Features, SpecAugmentTimeFractionCap) {
  SpecAugmentPolicy p{0, 0, 1, 100, 0.2};
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = draw_spec_augment_mask(50, 80, p, rng);
    EXPECT_LE(m.fraction(), 0.2 + 1e-12);
  }
}

TEST(Features, SpecAugmentNoopPolicyIsIdentity) {
  auto x = random_features(30, 6);
  std::mt19937_64 rng(7);
  EXPECT_TRUE(SpecAugmentPolicy::none().is_noop());
  EXPECT_EQ(values(spec_augment(x, SpecAugmentPolicy::none(), rng)), values(x));
}

std::vector<int> iota_labels(std::size_t n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

TEST(Features, SegmentGreedySplit) {
  auto x = random_features(2500, 8);  // 25 s
  auto labels = iota_labels(1250);
  auto segs = segment(x, labels, 10.0);
  ASSERT_EQ(segs.size(), 3u);
  EXPECT_DOUBLE_EQ(segs[0].features.duration_sec(), 10.0);
  EXPECT_DOUBLE_EQ(segs[1].features.duration_sec(), 10.0);
  EXPECT_DOUBLE_EQ(segs[2].features.duration_sec(), 5.0);
  auto short_one = segment(random_features(800, 9), iota_labels(400), 10.0);
  EXPECT_EQ(short_one.size(), 1u);
}

TEST(Features, SegmentIsAPartition) {
  for (std::size_t t : {1u, 2u, 999u, 1000u, 1001u, 2345u}) {
    auto x = random_features(t, t);
    auto labels = iota_labels(output_frame_count(t, 10));
    auto segs = segment(x, labels, 3.3);
    std::vector<int> joined_labels;
    std::vector<float> joined_frames;
    for (const auto& s : segs) {
      EXPECT_LE(s.features.duration_sec(), 3.3);
      EXPECT_EQ(s.labels.size(), output_frame_count(s.features.num_frames(), 10));
      joined_labels.insert(joined_labels.end(), s.labels.begin(), s.labels.end());
      auto v = values(s.features);
      joined_frames.insert(joined_frames.end(), v.begin(), v.end());
    }
    EXPECT_EQ(joined_labels, labels);
    EXPECT_EQ(joined_frames, values(x));
  }
  EXPECT_THROW(segment(random_features(10, 1), iota_labels(4), 10.0), std::invalid_argument);
}

TEST(Features, FileRoundTripIsExact) {
  auto dir = test::scratch_dir("features_io");
  auto x = random_features(17, 10, "u1");
  write_features(dir / "u1.feat", x);
  auto y = read_features(dir / "u1.feat", "u1");
  EXPECT_EQ(values(y), values(x));
  EXPECT_EQ(y.frame_period_ms, 10u);
  EXPECT_EQ(std::filesystem::file_size(dir / "u1.feat"), 20u + 17u * 80u * 4u);
  std::vector<int> labels{3, 0, 63, 7};
  write_labels(dir / "u1.lab", labels);
  EXPECT_EQ(read_labels(dir / "u1.lab"), labels);
  {
    std::ofstream bad(dir / "bad.feat", std::ios::binary);
    bad << "NOPE";
  }
  EXPECT_THROW(read_features(dir / "bad.feat", "bad"), std::runtime_error);
}

TEST(Features, CorpusRoundTrip) {
  auto dir = test::scratch_dir("corpus_io");
  auto corpus = generate_toy_corpus({5, 0.2, 0.4, 8, 3});
  write_corpus(dir, corpus);
  auto back = read_corpus(dir);
  ASSERT_EQ(back.size(), corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_EQ(back[i].features.utterance_id, corpus[i].features.utterance_id);
    EXPECT_EQ(back[i].labels, corpus[i].labels);
    EXPECT_EQ(values(back[i].features), values(corpus[i].features));
  }
}

TEST(ToyCorpus, DeterministicAndInRange) {
  ToyCorpusOptions opt{20, 1.0, 2.0, 64, 7};
  auto a = generate_toy_corpus(opt);
  auto b = generate_toy_corpus(opt);
  auto dev = generate_toy_corpus(opt, 1);
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].labels, b[i].labels);
    EXPECT_EQ(values(a[i].features), values(b[i].features));
    EXPECT_GE(a[i].features.duration_sec(), 1.0);
    EXPECT_LE(a[i].features.duration_sec(), 2.0);
    EXPECT_EQ(a[i].labels.size(), output_frame_count(a[i].features.num_frames(), 10));
    for (int l : a[i].labels) {
      EXPECT_GE(l, 0);
      EXPECT_LT(l, 64);
    }
  }
  EXPECT_NE(a[0].labels, dev[0].labels);
}

TEST(ToyCorpus, TransitionsAreRowStochastic) {
  ToyTask task(64, 7);
  for (std::size_t i = 0; i < 64; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 64; ++j) {
      EXPECT_GE(task.transition(i, j), 0.0);
      s += task.transition(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_GE(task.transition(i, i), ToyTask::kSelfLoop);
  }
}

// Power iteration on the transition matrix gives the stationary distribution.
std::vector<double> stationary(const ToyTask& task) {
  const std::size_t k = task.num_labels();
  std::vector<double> pi(k, 1.0 / static_cast<double>(k)), next(k);
  for (int it = 0; it < 5000; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        next[j] += pi[i] * task.transition(i, j);
      }
    }
    pi.swap(next);
  }
  return pi;
}

TEST(ToyCorpus, LabelMarginalsMatchStationaryDistribution) {
  ToyCorpusOptions opt{0, 1.0, 2.0, 64, 7};
  opt.num_utts = 1400;  // ~1.05e5 label frames
  auto corpus = generate_toy_corpus(opt);
  std::vector<double> counts(64, 0.0);
  double n = 0;
  for (const auto& u : corpus) {
    for (int l : u.labels) {
      counts[static_cast<std::size_t>(l)] += 1;
      n += 1;
    }
  }
  ASSERT_GE(n, 1e5);
  auto pi = stationary(ToyTask(64, 7));
  double tv = 0;
  for (std::size_t j = 0; j < 64; ++j) {
    EXPECT_NEAR(counts[j] / n, pi[j], 0.02) << "label " << j;
    tv += std::abs(counts[j] / n - pi[j]) / 2;
  }
  EXPECT_LT(tv, 0.05);
}

}  // namespace
}  // namespace trf
