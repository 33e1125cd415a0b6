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
#include <optional>

#include "trfam/attention.hpp"
#include "util.hpp"

namespace trf {
namespace {

using test::random_tensor;

MhaParams<double> make_mha(ParameterSet<double>& ps, std::size_t d, std::size_t heads,
                           std::size_t head_dim, std::uint64_t seed,
                           BetaDenominator beta = BetaDenominator::kHeadDim) {
  auto p = MhaParams<double>::allocate(ps, "mha.", d, heads, head_dim, beta);
  std::uint64_t s = seed;
  for (auto& item : ps.items()) {
    auto r = random_tensor<double>(item.value.shape(), ++s, 0.5);
    std::copy(r.data().begin(), r.data().end(), item.value.data().begin());
  }
  return p;
}

// Loop reference for one head over one sequence: softmax over allowed keys
// of beta * q_t . k_tau, then the weighted sum of values.
std::vector<double> reference_head(const Tensor<double>& x, const MhaParams<double>& p,
                                   std::size_t head, std::optional<std::size_t> rc) {
  const std::size_t t_len = x.dim(0), d = p.model_dim, dk = p.head_dim;
  auto proj = [&](const Tensor<double>& w, const Tensor<double>& b, std::size_t t,
                  std::size_t j) {
    double s = b.data()[head * dk + j];
    for (std::size_t c = 0; c < d; ++c) s += w(head * dk + j, c) * x(t, c);
    return s;
  };
  const double beta = 1.0 / std::sqrt(static_cast<double>(
                                p.beta_denominator == BetaDenominator::kHeadDim ? dk : d));
  std::vector<double> out(t_len * dk, 0.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    std::vector<double> logit(t_len, -INFINITY);
    double peak = -INFINITY;
    for (std::size_t tau = 0; tau < t_len; ++tau) {
      if (rc && tau > t + *rc) continue;
      double s = 0;
      for (std::size_t j = 0; j < dk; ++j) s += proj(p.wq, p.bq, t, j) * proj(p.wk, p.bk, tau, j);
      logit[tau] = beta * s;
      peak = std::max(peak, logit[tau]);
    }
    double z = 0;
    for (double l : logit) z += std::isinf(l) ? 0.0 : std::exp(l - peak);
    for (std::size_t tau = 0; tau < t_len; ++tau) {
      if (std::isinf(logit[tau])) continue;
      const double a = std::exp(logit[tau] - peak) / z;
      for (std::size_t j = 0; j < dk; ++j) out[t * dk + j] += a * proj(p.wv, p.bv, tau, j);
    }
  }
  return out;
}

TEST(Attention, MaskPredicate) {
  AttentionMask m{{5}, 1};
  EXPECT_TRUE(m.allows(2, 0, 5));
  EXPECT_TRUE(m.allows(2, 3, 5));
  EXPECT_FALSE(m.allows(2, 4, 5));
  EXPECT_FALSE(m.allows(4, 5, 5));
  auto full = AttentionMask::full({5});
  EXPECT_TRUE(full.allows(0, 4, 5));
}

TEST(Attention, SingleFrameReturnsValueProjection) {
  ParameterSet<double> ps;
  auto p = make_mha(ps, 8, 2, 4, 1);
  auto x = random_tensor<double>({1, 8}, 2);
  auto y = attend(x, p, 1, AttentionMask::full({1}), {});
  for (std::size_t j = 0; j < 4; ++j) {
    double v = p.bv.data()[4 + j];
    for (std::size_t c = 0; c < 8; ++c) v += p.wv(4 + j, c) * x(0, c);
    EXPECT_NEAR(y(0, j), v, 1e-12);
  }
}

TEST(Attention, ZeroQueryGivesUniformWeights) {
  ParameterSet<double> ps;
  auto p = make_mha(ps, 8, 1, 4, 3);
  std::fill(p.wq.data().begin(), p.wq.data().end(), 0.0);
  std::fill(p.bq.data().begin(), p.bq.data().end(), 0.0);
  auto x = random_tensor<double>({5, 8}, 4);
  auto y = attend(x, p, 0, AttentionMask{{5}, 0}, {});
  // With rc = 0, row t averages the values of rows 0..t.
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t j = 0; j < 4; ++j) {
      double mean = 0;
      for (std::size_t tau = 0; tau <= t; ++tau) {
        double v = p.bv.data()[j];
        for (std::size_t c = 0; c < 8; ++c) v += p.wv(j, c) * x(tau, c);
        mean += v / static_cast<double>(t + 1);
      }
      EXPECT_NEAR(y(t, j), mean, 1e-12);
    }
  }
}

class AttendOracle : public ::testing::TestWithParam<std::optional<std::size_t>> {};

TEST_P(AttendOracle, MatchesLoopReference) {
  const auto rc = GetParam();
  for (auto beta : {BetaDenominator::kHeadDim, BetaDenominator::kModelDim}) {
    ParameterSet<double> ps;
    auto p = make_mha(ps, 12, 3, 4, 5, beta);
    auto x = random_tensor<double>({9, 12}, 6);
    for (std::size_t h = 0; h < 3; ++h) {
      auto y = attend(x, p, h, AttentionMask{{9}, rc}, {});
      EXPECT_LT(test::max_abs_diff(y.data(), reference_head(x, p, h, rc)), 1e-12);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(RightContext, AttendOracle,
                         ::testing::Values(std::nullopt, std::optional<std::size_t>(0),
                                           std::optional<std::size_t>(2),
                                           std::optional<std::size_t>(20)));

TEST(Attention, UnboundedMaskEqualsFullContextBitForBit) {
  ParameterSet<double> ps;
  auto p = make_mha(ps, 8, 2, 4, 7);
  auto x = random_tensor<double>({6, 8}, 8);
  auto a = multi_head_attention(x, p, AttentionMask::full({6}), {});
  auto b = multi_head_attention(x, p, AttentionMask{{6}, 5}, {});
  EXPECT_EQ(test::max_abs_diff(a.data(), b.data()), 0.0);
}

TEST(Attention, MultiHeadMatchesConcatenatedHeadsThroughOutput) {
  ParameterSet<double> ps;
  auto p = make_mha(ps, 8, 2, 4, 9);
  auto x = random_tensor<double>({7, 8}, 10);
  auto y = multi_head_attention(x, p, AttentionMask{{7}, 1}, {});
  std::vector<double> heads(7 * 8);
  for (std::size_t h = 0; h < 2; ++h) {
    auto r = reference_head(x, p, h, 1);
    for (std::size_t t = 0; t < 7; ++t) {
      for (std::size_t j = 0; j < 4; ++j) heads[t * 8 + h * 4 + j] = r[t * 4 + j];
    }
  }
  for (std::size_t t = 0; t < 7; ++t) {
    for (std::size_t o = 0; o < 8; ++o) {
      double s = p.bo.data()[o];
      for (std::size_t c = 0; c < 8; ++c) s += p.wo(o, c) * heads[t * 8 + c];
      EXPECT_NEAR(y(t, o), s, 1e-12);
    }
  }
}

TEST(Attention, FutureFramesBeyondBudgetHaveNoEffect) {
  ParameterSet<double> ps;
  auto p = make_mha(ps, 8, 2, 4, 11);
  const std::size_t n = 12;
  auto x = random_tensor<double>({n, 8}, 12);
  for (std::size_t rc : {0u, 1u, 3u}) {
    const AttentionMask mask{{n}, rc};
    auto base = multi_head_attention(x, p, mask, {});
    for (std::size_t tau = 0; tau < n; ++tau) {
      auto y = x.detach();
      for (std::size_t c = 0; c < 8; ++c) y(tau, c) += 1.0;
      auto out = multi_head_attention(y, p, mask, {});
      for (std::size_t t = 0; t < n; ++t) {
        bool same = true;
        for (std::size_t o = 0; o < 8; ++o) same = same && out(t, o) == base(t, o);
        EXPECT_EQ(same, tau > t + rc) << "rc=" << rc << " t=" << t << " tau=" << tau;
      }
    }
  }
}

TEST(Attention, PaddedBatchMatchesSeparateSequences) {
  ParameterSet<double> ps;
  auto p = make_mha(ps, 8, 2, 4, 13);
  auto a = random_tensor<double>({5, 8}, 14);
  auto b = random_tensor<double>({3, 8}, 15);
  Tensor<double> packed({10, 8}, 123.0);  // padding rows hold garbage
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 8; ++c) packed(t, c) = a(t, c);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t c = 0; c < 8; ++c) packed(5 + t, c) = b(t, c);
  auto y = multi_head_attention(packed, p, AttentionMask{{5, 3}, 1}, {});
  auto ya = multi_head_attention(a, p, AttentionMask{{5}, 1}, {});
  auto yb = multi_head_attention(b, p, AttentionMask{{3}, 1}, {});
  for (std::size_t o = 0; o < 8; ++o) {
    for (std::size_t t = 0; t < 5; ++t) EXPECT_NEAR(y(t, o), ya(t, o), 1e-12);
    for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(y(5 + t, o), yb(t, o), 1e-12);
    // Padding rows see only the output bias.
    EXPECT_NEAR(y(8, o), p.bo.data()[o], 1e-12);
  }
}

TEST(Attention, DropoutOnWeightsIsKeyedAndScaled) {
  ParameterSet<double> ps;
  auto p = make_mha(ps, 8, 2, 4, 16);
  auto x = random_tensor<double>({20, 8}, 17);
  const DropoutSpec a{0.5, Mode::kTrain, RngKey::from({1})};
  const DropoutSpec b{0.5, Mode::kTrain, RngKey::from({2})};
  auto ya = multi_head_attention(x, p, AttentionMask::full({20}), a);
  auto ya2 = multi_head_attention(x, p, AttentionMask::full({20}), a);
  auto yb = multi_head_attention(x, p, AttentionMask::full({20}), b);
  auto eval = multi_head_attention(x, p, AttentionMask::full({20}),
                                   DropoutSpec{0.5, Mode::kEval, RngKey::from({1})});
  auto plain = multi_head_attention(x, p, AttentionMask::full({20}), {});
  EXPECT_EQ(test::max_abs_diff(ya.data(), ya2.data()), 0.0);
  EXPECT_GT(test::max_abs_diff(ya.data(), yb.data()), 0.0);
  EXPECT_EQ(test::max_abs_diff(eval.data(), plain.data()), 0.0);
}

TEST(Attention, BetaFollowsConfiguredDenominator) {
  ParameterSet<float> ps;
  auto a = MhaParams<float>::allocate(ps, "a.", 128, 2, 64, BetaDenominator::kHeadDim);
  auto b = MhaParams<float>::allocate(ps, "b.", 128, 2, 64, BetaDenominator::kModelDim);
  EXPECT_FLOAT_EQ(a.beta(), 0.125f);
  EXPECT_FLOAT_EQ(b.beta(), 1.0f / std::sqrt(128.0f));
}

TEST(Attention, RejectsMismatchedShapes) {
  ParameterSet<double> ps;
  auto p = make_mha(ps, 8, 2, 4, 18);
  auto x = random_tensor<double>({6, 8}, 19);
  EXPECT_THROW(multi_head_attention(x, p, AttentionMask::full({4, 4}), {}), ShapeError);
  EXPECT_THROW(multi_head_attention(x, p, AttentionMask::full({7, 1, 1}), {}), ShapeError);
  EXPECT_THROW(attend(x, p, 2, AttentionMask::full({6}), {}), std::out_of_range);
  auto wrong = random_tensor<double>({6, 5}, 20);
  EXPECT_THROW(attend(wrong, p, 0, AttentionMask::full({6}), {}), ShapeError);
}

}  // namespace
}  // namespace trf
