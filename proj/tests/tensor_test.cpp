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

#include "trfam/ops.hpp"
#include "trfam/tensor.hpp"

namespace trf {
namespace {

TEST(Tensor, ShapeAndFill) {
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
  for (float v : t.data()) {
    EXPECT_EQ(v, 1.5f);
  }
  EXPECT_EQ(to_string(t.shape()), "[2x3]");
  EXPECT_EQ(numel({4, 5, 6}), 120u);
}

TEST(Tensor, ValueCountMustMatchShape) {
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Tensor, CopiesShareStorageDetachDoesNot) {
  Tensor<double> a({2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> b = a;
  Tensor<double> c = a.detach();
  b(0, 1) = 9;
  EXPECT_EQ(a(0, 1), 9);
  EXPECT_EQ(c(0, 1), 2);
  EXPECT_TRUE(a.shares_storage(b));
  EXPECT_FALSE(a.shares_storage(c));
}

TEST(Tensor, ItemRequiresSingleElement) {
  EXPECT_EQ(Tensor<float>::scalar(3.f).item(), 3.f);
  EXPECT_THROW(Tensor<float>({2}).item(), ShapeError);
}

TEST(Tensor, GradIsLazyAndConstAccessThrows) {
  Tensor<float> t({3});
  EXPECT_FALSE(t.has_grad());
  const Tensor<float>& ct = t;
  EXPECT_ANY_THROW(ct.grad());
  t.grad()[1] = 2.f;
  EXPECT_TRUE(t.has_grad());
  t.zero_grad();
  EXPECT_EQ(ct.grad()[1], 0.f);
  t.clear_grad();
  EXPECT_FALSE(t.has_grad());
}

TEST(Tape, RecordsOnlyWhenActiveAndInputsRequireGrad) {
  Tape<double> tape;
  Tensor<double> x({2}, std::vector<double>{1, 2});
  Tensor<double> w({2}, std::vector<double>{3, 4});
  w.set_requires_grad(true);
  auto outside = add(x, w);
  EXPECT_EQ(tape.size(), 0u);
  {
    Tape<double>::Scope scope(tape);
    EXPECT_EQ(Tape<double>::active(), &tape);
    auto constant = add(x, x);
    EXPECT_EQ(tape.size(), 0u);
    auto y = sum(add(x, w));
    EXPECT_EQ(tape.size(), 2u);
    tape.backward(y);
  }
  EXPECT_EQ(Tape<double>::active(), nullptr);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_EQ(w.grad()[0], 1.0);
  EXPECT_EQ(w.grad()[1], 1.0);
  EXPECT_FALSE(x.has_grad());
}

TEST(Tape, GradientsAccumulateOverReuse) {
  Tape<double> tape;
  Tensor<double> w({1}, std::vector<double>{2});
  w.set_requires_grad(true);
  {
    Tape<double>::Scope scope(tape);
    auto y = sum(add(scale(w, 3.0), w));  // 4w
    tape.backward(y);
  }
  EXPECT_DOUBLE_EQ(w.grad()[0], 4.0);
}

TEST(Tape, ScopesNest) {
  Tape<float> outer, inner;
  {
    Tape<float>::Scope a(outer);
    {
      Tape<float>::Scope b(inner);
      EXPECT_EQ(Tape<float>::active(), &inner);
    }
    EXPECT_EQ(Tape<float>::active(), &outer);
  }
  EXPECT_EQ(Tape<float>::active(), nullptr);
}

TEST(Tensor, CastPreservesValues) {
  Tensor<double> d({2}, std::vector<double>{0.5, -1.25});
  auto f = cast<float>(d);
  EXPECT_EQ(f.data()[0], 0.5f);
  EXPECT_EQ(f.data()[1], -1.25f);
  auto same = cast<double>(d);
  EXPECT_FALSE(same.shares_storage(d));
}

}  // namespace
}  // namespace trf
