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

#include <algorithm>

#include "trfam/config.hpp"

namespace trf {
namespace {

bool mentions(const ConfigError& e, const std::string& needle) {
  return std::any_of(e.problems().begin(), e.problems().end(),
                     [&](const std::string& p) { return p.find(needle) != std::string::npos; });
}

TEST(Config, StandardArchitecture) {
  auto c = EncoderConfig::standard(FrontendMethod::kConvolution, 512, 24, 8000);
  EXPECT_EQ(c.num_heads, 8u);
  EXPECT_EQ(c.ffn_dim, 2048u);
  EXPECT_TRUE(c.problems().empty());
}

TEST(Config, EncoderTextRoundTrip) {
  auto c = EncoderConfig::standard(FrontendMethod::kSinusoid, 128, 6, 42);
  c.dropout = 0.123456789;
  c.layernorm_eps = 1e-7;
  c.right_context = 10;
  c.iterated_loss = IteratedLossConfig{{2, 4}, 96, 0.3};
  c.beta_denominator = BetaDenominator::kModelDim;
  const auto text = to_text(c);
  EXPECT_EQ(text.rfind("format=trfam-encoder-1\n", 0), 0u);
  EXPECT_EQ(encoder_config_from_text(text), c);
  EXPECT_EQ(to_text(encoder_config_from_text(text)), text);
}

TEST(Config, ExperimentTextRoundTrip) {
  ExperimentConfig e;
  e.encoder = EncoderConfig::standard(FrontendMethod::kFrameStacking, 64, 2, 10);
  e.train.clip_norm = 5.0;
  e.train.max_steps = 77;
  e.train.schedule.warmup_steps = 12;
  e.train.spec_augment = false;
  e.train_corpus = "/data/train";
  e.dev_corpus = "/data/dev";
  e.output_dir = "/tmp/out";
  auto back = experiment_config_from_text(to_text(e));
  EXPECT_EQ(back.encoder, e.encoder);
  EXPECT_EQ(back.train, e.train);
  EXPECT_EQ(back.train_corpus, e.train_corpus);
  EXPECT_EQ(back.output_dir, e.output_dir);
}

TEST(Config, CommentsBlankLinesAndDefaults) {
  auto c = encoder_config_from_text(
      "# model\n\nfrontend = fs   # alias\nmodel_dim=128\nnum_heads=2\nffn_dim=512\n"
      "num_layers=3\niterated_loss_taps=none\n");
  EXPECT_EQ(c.frontend.method, FrontendMethod::kFrameStacking);
  EXPECT_EQ(c.model_dim, 128u);
  EXPECT_FALSE(c.iterated_loss.has_value());
  EXPECT_FALSE(c.right_context.has_value());
  EXPECT_EQ(c.dropout, 0.1);
}

TEST(Config, EveryProblemIsReported) {
  try {
    encoder_config_from_text(
        "model_dim=abc\nnum_layers=-3\ndropout=2x\nfrontend=lstm\nmystery=1\n"
        "beta_denominator=both\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.problems().size(), 6u) << e.what();
    EXPECT_TRUE(mentions(e, "model_dim"));
    EXPECT_TRUE(mentions(e, "num_layers"));
    EXPECT_TRUE(mentions(e, "dropout"));
    EXPECT_TRUE(mentions(e, "frontend"));
    EXPECT_TRUE(mentions(e, "mystery"));
    EXPECT_TRUE(mentions(e, "beta_denominator"));
  }
}

TEST(Config, SemanticProblemsAreCollected) {
  try {
    experiment_config_from_text("model_dim=96\nlr_peak=0\nmax_frames_per_batch=0\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_TRUE(mentions(e, "multiple of 64"));
    EXPECT_TRUE(mentions(e, "learning rate"));
    EXPECT_TRUE(mentions(e, "max_frames_per_batch"));
    EXPECT_TRUE(mentions(e, "train_corpus"));
    EXPECT_TRUE(mentions(e, "output_dir"));
  }
}

TEST(Config, MalformedLinesAndDuplicates) {
  EXPECT_THROW(parse_key_values("model_dim\n"), ConfigError);
  EXPECT_THROW(parse_key_values("a=1\na=2\n"), ConfigError);
  EXPECT_THROW(parse_key_values("=1\n"), ConfigError);
  auto kv = parse_key_values(" a = b c \n");
  EXPECT_EQ(kv.at("a"), "b c");
}

TEST(Config, TapListValidation) {
  EXPECT_THROW(encoder_config_from_text("num_layers=4\niterated_loss_taps=0,4\n"), ConfigError);
  EXPECT_THROW(encoder_config_from_text("num_layers=4\niterated_loss_taps=2,2\n"), ConfigError);
  EXPECT_THROW(encoder_config_from_text("num_layers=4\niterated_loss_taps=2,x\n"), ConfigError);
  auto ok = encoder_config_from_text("num_layers=4\niterated_loss_taps=1, 3\n");
  EXPECT_EQ(ok.iterated_loss->tap_layers, (std::vector<std::size_t>{1, 3}));
}

TEST(Config, EncoderReaderIgnoresTrainingKeys) {
  KeyValues kv{{"model_dim", "64"}, {"num_heads", "1"}, {"ffn_dim", "256"},
               {"seed", "9"}, {"train_corpus", "/x"}, {"lr_peak", "0.01"}};
  EXPECT_EQ(encoder_config_from_values(kv).model_dim, 64u);
  kv["unknown_key"] = "1";
  EXPECT_THROW(encoder_config_from_values(kv), ConfigError);
}

TEST(Config, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1e-5, 1.0 / 3.0, 123456.789, 0.0, 2.5e-300}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
}

}  // namespace
}  // namespace trf
