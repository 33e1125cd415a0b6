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

#include <cmath>
#include <numeric>

#include "trfam/ops.hpp"
#include "util.hpp"

namespace trf {
namespace {

using test::random_tensor;

// Plain loop references, written independently of the Eigen-backed ops.

std::vector<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b,
                                 bool b_transposed) {
  const std::size_t m = a.dim(0), k = a.dim(1);
  const std::size_t n = b_transposed ? b.dim(0) : b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) {
        s += a(i, p) * (b_transposed ? b(j, p) : b(p, j));
      }
      out[i * n + j] = s;
    }
  }
  return out;
}

double padded_at(const Tensor<double>& x, std::size_t c, long f, long t, PadMode fp,
                 PadMode tp) {
  const long nf = static_cast<long>(x.dim(1)), nt = static_cast<long>(x.dim(2));
  if (f < 0 || f >= nf) {
    if (fp == PadMode::kZero) return 0.0;
    f = std::clamp(f, 0L, nf - 1);
  }
  if (t < 0 || t >= nt) {
    if (tp == PadMode::kZero) return 0.0;
    t = std::clamp(t, 0L, nt - 1);
  }
  return x.data()[(c * nf + f) * nt + t];
}

TEST(Ops, MatmulMatchesLoops) {
  auto a = random_tensor<double>({5, 7}, 1);
  auto b = random_tensor<double>({7, 3}, 2);
  auto bt = random_tensor<double>({3, 7}, 3);
  auto c = matmul(a, b);
  auto ref = naive_matmul(a, b, false);
  ASSERT_EQ(c.shape(), (Shape{5, 3}));
  EXPECT_LT(test::max_abs_diff(c.data(), ref), 1e-12);
  EXPECT_LT(test::max_abs_diff(matmul_nt(a, bt).data(), naive_matmul(a, bt, true)), 1e-12);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Ops, LinearAddsBiasPerRow) {
  auto x = random_tensor<double>({4, 6}, 4);
  auto w = random_tensor<double>({2, 6}, 5);
  Tensor<double> b({2}, std::vector<double>{0.5, -2.0});
  auto y = linear(x, w, b);
  auto ref = naive_matmul(x, w, true);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(y(i, 0), ref[i * 2] + 0.5, 1e-12);
    EXPECT_NEAR(y(i, 1), ref[i * 2 + 1] - 2.0, 1e-12);
  }
  EXPECT_LT(test::max_abs_diff(linear(x, w, Tensor<double>()).data(), ref), 1e-12);
}

TEST(Ops, GeluIsErfForm) {
  Tensor<double> x({5}, std::vector<double>{-3, -0.5, 0, 0.7, 2.5});
  auto y = gelu(x);
  for (std::size_t i = 0; i < 5; ++i) {
    const double v = x.data()[i];
    EXPECT_NEAR(y.data()[i], 0.5 * v * (1 + std::erf(v / std::sqrt(2.0))), 1e-15);
  }
}

TEST(Ops, ReluClampsNegatives) {
  Tensor<float> x({4}, std::vector<float>{-1, 0, 2, -0.5f});
  auto y = relu(x);
  EXPECT_EQ(std::vector<float>(y.data().begin(), y.data().end()),
            (std::vector<float>{0, 0, 2, 0}));
}

TEST(Ops, LayerNormMatchesScalarReference) {
  auto x = random_tensor<double>({3, 8}, 6, 3.0);
  auto gamma = random_tensor<double>({8}, 7);
  auto beta = random_tensor<double>({8}, 8);
  const double eps = 1e-5;
  auto y = layernorm(x, gamma, beta, eps);
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 8; ++c) mean += x(r, c) / 8;
    for (std::size_t c = 0; c < 8; ++c) var += (x(r, c) - mean) * (x(r, c) - mean) / 8;
    for (std::size_t c = 0; c < 8; ++c) {
      const double ref =
          (x(r, c) - mean) / std::sqrt(var + eps) * gamma.data()[c] + beta.data()[c];
      EXPECT_NEAR(y(r, c), ref, 1e-12);
    }
  }
}

TEST(Ops, SoftmaxMaskedRowsSumToOneAndMaskedAreZero) {
  auto logits = random_tensor<double>({6, 6}, 9, 4.0);
  KeepMask mask = KeepMask::all(6, 6);
  std::mt19937_64 rng(10);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      mask.keep[r * 6 + c] = (c <= r || rng() % 2) ? 1 : 0;
    }
  }
  auto p = softmax_masked(logits, mask);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      if (mask.kept(r, c)) {
        EXPECT_GE(p(r, c), 0.0);
        s += p(r, c);
      } else {
        EXPECT_EQ(p(r, c), 0.0);
      }
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  mask.keep.assign(36, 0);
  mask.keep[0] = 1;
  EXPECT_ANY_THROW(softmax_masked(logits, mask));
}

TEST(Ops, SoftmaxIsStableForLargeLogits) {
  Tensor<float> z({1, 3}, std::vector<float>{1000.f, 1000.f, -1000.f});
  auto p = softmax_masked(z, KeepMask::all(1, 3));
  EXPECT_NEAR(p(0, 0), 0.5f, 1e-6);
  EXPECT_NEAR(p(0, 2), 0.0f, 1e-6);
}

TEST(Ops, DropoutIdentityCases) {
  auto x = random_tensor<float>({10, 10}, 11);
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    auto y = dropout(x, 0.0, mode, RngKey{1});
    EXPECT_EQ(test::max_abs_diff(x.data(), y.data()), 0.0);
  }
  auto e = dropout(x, 0.1, Mode::kEval, RngKey{1});
  EXPECT_EQ(test::max_abs_diff(x.data(), e.data()), 0.0);
  EXPECT_ANY_THROW(dropout(x, 1.0, Mode::kTrain, RngKey{1}));
}

TEST(Ops, DropoutRateAndScale) {
  Tensor<float> ones({1000, 1000}, 1.0f);
  auto y = dropout(ones, 0.1, Mode::kTrain, RngKey::from({42}));
  std::size_t dropped = 0;
  for (float v : y.data()) {
    if (v == 0.0f) {
      ++dropped;
    } else {
      EXPECT_FLOAT_EQ(v, 1.0f / 0.9f);
    }
  }
  EXPECT_NEAR(static_cast<double>(dropped) / 1e6, 0.1, 0.003);
}

TEST(Ops, DropoutIsAPureFunctionOfKey) {
  auto x = random_tensor<float>({50, 20}, 12);
  auto a = dropout(x, 0.3, Mode::kTrain, RngKey::from({1, 2, 3}));
  auto b = dropout(x, 0.3, Mode::kTrain, RngKey::from({1, 2, 3}));
  auto c = dropout(x, 0.3, Mode::kTrain, RngKey::from({1, 2, 4}));
  EXPECT_EQ(std::vector<float>(a.data().begin(), a.data().end()),
            std::vector<float>(b.data().begin(), b.data().end()));
  EXPECT_GT(test::max_abs_diff(a.data(), c.data()), 0.0);
}

TEST(Ops, CrossEntropyUniformAndMargin) {
  Tensor<double> uniform({3, 4}, 0.0);
  std::vector<int> t{0, 3, 1};
  EXPECT_NEAR(cross_entropy(uniform, t).item(), std::log(4.0), 1e-12);
  Tensor<double> sharp({1, 4}, 0.0);
  sharp(0, 2) = 20.0;
  std::vector<int> t2{2};
  EXPECT_LT(cross_entropy(sharp, t2).item(), 1e-8);
  std::vector<int> bad{4};
  EXPECT_THROW(cross_entropy(sharp, bad), std::out_of_range);
}

TEST(Ops, CrossEntropySkipsPaddedRows) {
  auto z = random_tensor<double>({4, 5}, 13);
  std::vector<int> t{1, 2, 99, 0};  // padded row may hold anything
  std::vector<std::uint8_t> valid{1, 1, 0, 1};
  double ref = 0;
  for (std::size_t r : {0u, 1u, 3u}) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += std::exp(z(r, c));
    ref += std::log(s) - z(r, static_cast<std::size_t>(t[r]));
  }
  EXPECT_NEAR(cross_entropy(z, t, valid).item(), ref / 3, 1e-12);
}

TEST(Ops, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  auto z = random_tensor<double>({3, 4}, 14);
  z.set_requires_grad(true);
  std::vector<int> t{2, 0, 3};
  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    auto loss = cross_entropy(z, t);
    tape.backward(loss);
  }
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) s += std::exp(z(r, c));
    for (std::size_t c = 0; c < 4; ++c) {
      const double expect = (std::exp(z(r, c)) / s - (static_cast<int>(c) == t[r])) / 3.0;
      EXPECT_NEAR(z.grad()[r * 4 + c], expect, 1e-12);
    }
  }
}

class ConvPadTest : public ::testing::TestWithParam<std::pair<PadMode, PadMode>> {};

TEST_P(ConvPadTest, MatchesDirectCorrelation) {
  const auto [fp, tp] = GetParam();
  auto x = random_tensor<double>({2, 5, 6}, 15);
  auto w = random_tensor<double>({3, 2, 3, 3}, 16);
  auto b = random_tensor<double>({3}, 17);
  auto y = conv2d(x, w, b, fp, tp);
  ASSERT_EQ(y.shape(), (Shape{3, 5, 6}));
  auto wd = w.data();
  for (std::size_t o = 0; o < 3; ++o) {
    for (long f = 0; f < 5; ++f) {
      for (long t = 0; t < 6; ++t) {
        double s = b.data()[o];
        for (std::size_t c = 0; c < 2; ++c) {
          for (long i = 0; i < 3; ++i) {
            for (long j = 0; j < 3; ++j) {
              s += wd[((o * 2 + c) * 3 + i) * 3 + j] * padded_at(x, c, f + i - 1, t + j - 1, fp, tp);
            }
          }
        }
        EXPECT_NEAR(y.data()[(o * 5 + f) * 6 + t], s, 1e-12);
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(PadModes, ConvPadTest,
                         ::testing::Values(std::pair{PadMode::kZero, PadMode::kZero},
                                           std::pair{PadMode::kZero, PadMode::kReplicate},
                                           std::pair{PadMode::kReplicate, PadMode::kZero},
                                           std::pair{PadMode::kReplicate, PadMode::kReplicate}));

TEST(Ops, MaxPoolExtentValuesAndTieBreak) {
  auto x = random_tensor<double>({2, 6, 7}, 18);
  for (auto [sf, st] : {std::pair<std::size_t, std::size_t>{2, 2}, {1, 1}, {2, 1}}) {
    auto y = maxpool2d(x, sf, st);
    const std::size_t of = (6 - 2) / sf + 1, ot = (7 - 2) / st + 1;
    ASSERT_EQ(y.shape(), (Shape{2, of, ot}));
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t i = 0; i < of; ++i) {
        for (std::size_t j = 0; j < ot; ++j) {
          double m = -1e300;
          for (std::size_t a = 0; a < 2; ++a) {
            for (std::size_t b = 0; b < 2; ++b) {
              m = std::max(m, x.data()[(c * 6 + i * sf + a) * 7 + j * st + b]);
            }
          }
          EXPECT_EQ(y.data()[(c * of + i) * ot + j], m);
        }
      }
    }
  }
  Tensor<double> tie({1, 2, 2}, 1.0);
  tie.set_requires_grad(true);
  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    auto s = sum(maxpool2d(tie, 2, 2));
    tape.backward(s);
  }
  EXPECT_EQ(std::vector<double>(tie.grad().begin(), tie.grad().end()),
            (std::vector<double>{1, 0, 0, 0}));
}

TEST(Ops, PadReplicateRepeatsEdges) {
  Tensor<double> x({1, 2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  auto t = pad_replicate(x, 2, 1, 2);
  EXPECT_EQ(t.shape(), (Shape{1, 2, 6}));
  EXPECT_EQ(std::vector<double>(t.data().begin(), t.data().end()),
            (std::vector<double>{1, 1, 2, 3, 3, 3, 4, 4, 5, 6, 6, 6}));
  auto f = pad_replicate(x, 1, 1, 0);
  EXPECT_EQ(std::vector<double>(f.data().begin(), f.data().end()),
            (std::vector<double>{1, 2, 3, 1, 2, 3, 4, 5, 6}));
}

TEST(Ops, FramesFromChannelsLayout) {
  auto x = random_tensor<double>({3, 4, 5}, 19);
  auto y = frames_from_channels(x);
  ASSERT_EQ(y.shape(), (Shape{5, 12}));
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t f = 0; f < 4; ++f) {
      for (std::size_t t = 0; t < 5; ++t) {
        EXPECT_EQ(y(t, c * 4 + f), x.data()[(c * 4 + f) * 5 + t]);
      }
    }
  }
}

TEST(Ops, SliceAndAssembleRoundTrip) {
  auto x = random_tensor<double>({6, 4}, 20);
  auto top = slice(x, 0, 3, 0, 4);
  auto bottom = slice(x, 3, 3, 0, 4);
  auto back = assemble<double>(6, 4, {{top, 0, 0}, {bottom, 3, 0}});
  EXPECT_EQ(test::max_abs_diff(back.data(), x.data()), 0.0);
  auto padded = assemble<double>(8, 5, {{top, 1, 1}});
  EXPECT_EQ(padded(0, 0), 0.0);
  EXPECT_EQ(padded(1, 1), x(0, 0));
  EXPECT_EQ(padded(7, 4), 0.0);
  EXPECT_THROW(assemble<double>(6, 4, {{top, 0, 0}, {top, 2, 0}}), ShapeError);
  EXPECT_THROW(slice(x, 4, 3, 0, 4), ShapeError);
}

TEST(Ops, ForwardIsBitReproducible) {
  auto x = random_tensor<float>({16, 32}, 21);
  auto w = random_tensor<float>({24, 32}, 22);
  auto b = random_tensor<float>({24}, 23);
  auto run = [&] {
    auto h = gelu(linear(x, w, b));
    return dropout(h, 0.2, Mode::kTrain, RngKey::from({5, 1}));
  };
  auto a = run(), c = run();
  EXPECT_EQ(std::vector<float>(a.data().begin(), a.data().end()),
            std::vector<float>(c.data().begin(), c.data().end()));
}

}  // namespace
}  // namespace trf
