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

#include "trfam/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "trfam/attention.hpp"
#include "trfam/encoder.hpp"
#include "trfam/features.hpp"
#include "trfam/frontend.hpp"
#include "trfam/ops.hpp"
#include "trfam/rng.hpp"

namespace trf {

Tensor<double> weighted_sum(const Tensor<double>& x, const std::vector<double>& weights) {
  if (weights.size() != x.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                     to_string(x.shape()));
  }
  auto v = x.data();
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s += v[i] * weights[i];
  }
  Tensor<double> out = Tensor<double>::scalar(s);
  auto* tape = Tape<double>::active();
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([out, x = x, weights]() mutable {
      if (!out.has_grad()) {
        return;
      }
      const double g = std::as_const(out).grad()[0];
      auto gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += g * weights[i];
      }
    });
  }
  return out;
}

GradCheckResult check_gradients(const std::string& name,
                                const std::function<Tensor<double>()>& loss,
                                std::vector<Tensor<double>> inputs,
                                const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckResult r;
  r.name = name;
  r.tolerance = options.tolerance;

  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.clear_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    typename Tape<double>::Scope scope(tape);
    Tensor<double> l = loss();
    tape.backward(l);
  }
  for (auto& x : inputs) {
    if (x.has_grad()) {
      auto g = std::as_const(x).grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(x.size(), 0.0);
    }
    x.clear_grad();
  }

  // Finite differences run with no tape active.
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto v = inputs[k].data();
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (options.samples > 0 && options.samples < idx.size()) {
      std::mt19937_64 rng(RngKey::from({options.seed, k}).value);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.samples);
    }
    for (auto i : idx) {
      const double orig = v[i];
      v[i] = orig + options.step;
      const double up = loss().item();
      v[i] = orig - options.step;
      const double down = loss().item();
      v[i] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      if (abs_err / denom > r.max_rel_error) {
        r.max_rel_error = abs_err / denom;
        r.worst_analytic = a;
        r.worst_numeric = numeric;
      }
      ++r.checked;
    }
  }
  r.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

namespace {

class Fixture {
 public:
  explicit Fixture(std::uint64_t seed) : rng_(seed) {}

  Tensor<double> random(Shape shape, double lo_abs = 0.0) {
    Tensor<double> t(std::move(shape));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : t.data()) {
      do {
        v = normal(rng_);
      } while (std::abs(v) < lo_abs);
    }
    t.set_requires_grad(true);
    return t;
  }

  std::vector<double> weights(std::size_t n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> w(n);
    for (auto& x : w) {
      x = u(rng_);
    }
    return w;
  }

  // Loss = sum(op(inputs) * W) with W drawn once for the op's output shape.
  template <typename F>
  std::function<Tensor<double>()> probe(F op) {
    const std::size_t n = op().size();
    auto w = weights(n);
    return [op, w]() { return weighted_sum(op(), w); };
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

FeatureSequence random_features(std::size_t frames, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Tensor<float> x(Shape{frames, kFeatureDim});
  for (auto& v : x.data()) {
    v = normal(rng);
  }
  return make_feature_sequence(x, kInputPeriodMs, "probe");
}

}  // namespace

GradCheckResult check_model_gradients(const EncoderConfig& config, std::size_t samples,
                                      std::uint64_t seed, double tolerance) {
  auto model = std::make_shared<AcousticModel<double>>(config);
  model->initialize(seed);
  std::vector<Tensor<double>> inputs;
  for (auto& p : model->parameters().items()) {
    inputs.push_back(p.value);
  }
  std::mt19937_64 rng(RngKey::from({seed, 0x6d6f64656cULL}).value);
  const FeatureSequence a = random_features(11, rng);
  const FeatureSequence b = random_features(8, rng);
  std::uniform_int_distribution<int> label(0, static_cast<int>(config.num_outputs) - 1);
  auto la = std::make_shared<std::vector<int>>(output_frame_count(11, kInputPeriodMs));
  auto lb = std::make_shared<std::vector<int>>(output_frame_count(8, kInputPeriodMs));
  std::generate(la->begin(), la->end(), [&] { return label(rng); });
  std::generate(lb->begin(), lb->end(), [&] { return label(rng); });
  const RngKey key = RngKey::from({seed, 11});
  auto loss = [model, a, b, la, lb, key]() {
    const FeatureSequence* batch[] = {&a, &b};
    auto enc = model->encode(std::span<const FeatureSequence* const>(batch),
                             model->train_options(key));
    const std::vector<int>* labels[] = {la.get(), lb.get()};
    auto targets = pack_targets(std::span<const std::vector<int>* const>(labels), enc.lengths,
                                enc.max_length);
    return model->loss(enc, targets).total;
  };
  GradCheckOptions opts;
  opts.samples = samples;
  opts.tolerance = tolerance;
  opts.seed = seed;
  std::string name = "model(" + std::string(to_string(config.frontend.method)) + ", " +
                     std::to_string(config.num_layers) + " layers";
  if (config.iterated_loss) {
    name += ", iterated loss";
  }
  return check_gradients(name + ")", loss, inputs, opts);
}

std::vector<GradCheckResult> run_gradient_suite(const GradSuiteOptions& options) {
  std::vector<GradCheckResult> results;
  Fixture fx(options.seed);
  GradCheckOptions op_opts;
  op_opts.samples = options.samples;
  op_opts.tolerance = options.op_tolerance;
  op_opts.seed = options.seed;
  GradCheckOptions big_opts = op_opts;
  big_opts.samples = options.end_to_end_samples;

  auto run = [&](const std::string& name, auto op, std::vector<Tensor<double>> inputs,
                 const GradCheckOptions& o) {
    results.push_back(check_gradients(name, fx.probe(op), std::move(inputs), o));
  };

  {
    auto a = fx.random({3, 4}), b = fx.random({3, 4});
    run("add", [=] { return add(a, b); }, {a, b}, op_opts);
    run("scale", [=] { return scale(a, 0.7); }, {a}, op_opts);
    run("sum", [=] { return sum(a); }, {a}, op_opts);
  }
  {
    auto a = fx.random({3, 5}), b = fx.random({5, 4}), c = fx.random({4, 5});
    run("matmul", [=] { return matmul(a, b); }, {a, b}, op_opts);
    run("matmul_nt", [=] { return matmul_nt(a, c); }, {a, c}, op_opts);
  }
  {
    auto x = fx.random({4, 6}), w = fx.random({3, 6}), b = fx.random({3});
    run("linear", [=] { return linear(x, w, b); }, {x, w, b}, op_opts);
    run("linear(no bias)", [=] { return linear(x, w, Tensor<double>()); }, {x, w}, op_opts);
  }
  {
    auto x = fx.random({4, 5}, 0.05);
    run("relu", [=] { return relu(x); }, {x}, op_opts);
    run("gelu", [=] { return gelu(x); }, {x}, op_opts);
  }
  {
    auto x = fx.random({4, 6}), g = fx.random({6}), b = fx.random({6});
    run("layernorm", [=] { return layernorm(x, g, b, 1e-5); }, {x, g, b}, op_opts);
  }
  {
    auto x = fx.random({4, 4});
    KeepMask m = KeepMask::all(4, 4);
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t tau = t + 2; tau < 4; ++tau) {
        m.keep[t * 4 + tau] = 0;
      }
    }
    run("softmax_masked", [=] { return softmax_masked(x, m); }, {x}, op_opts);
  }
  {
    auto x = fx.random({5, 6});
    const RngKey key = RngKey::from({options.seed, 99});
    run("dropout(train)", [=] { return dropout(x, 0.3, Mode::kTrain, key); }, {x}, op_opts);
  }
  {
    auto logits = fx.random({5, 4});
    const std::vector<int> targets = {0, 3, 1, 2, 1};
    const std::vector<std::uint8_t> valid = {1, 1, 0, 1, 1};
    run("cross_entropy",
        [=] { return cross_entropy(logits, std::span<const int>(targets),
                                   std::span<const std::uint8_t>(valid)); },
        {logits}, op_opts);
  }
  {
    auto x = fx.random({2, 5, 6}), w = fx.random({3, 2, 3, 3}), b = fx.random({3});
    run("conv2d(zero,replicate)",
        [=] { return conv2d(x, w, b, PadMode::kZero, PadMode::kReplicate); }, {x, w, b},
        op_opts);
    run("conv2d(replicate,zero)",
        [=] { return conv2d(x, w, b, PadMode::kReplicate, PadMode::kZero); }, {x, w, b},
        op_opts);
  }
  {
    auto x = fx.random({2, 4, 6});
    run("maxpool2d(2,2)", [=] { return maxpool2d(x, 2, 2); }, {x}, op_opts);
    run("maxpool2d(1,1)", [=] { return maxpool2d(x, 1, 1); }, {x}, op_opts);
    run("maxpool2d(2,1)", [=] { return maxpool2d(x, 2, 1); }, {x}, op_opts);
    run("pad_replicate(freq)", [=] { return pad_replicate(x, 1, 1, 2); }, {x}, op_opts);
    run("pad_replicate(time)", [=] { return pad_replicate(x, 2, 2, 1); }, {x}, op_opts);
    run("frames_from_channels", [=] { return frames_from_channels(x); }, {x}, op_opts);
  }
  {
    auto x = fx.random({5, 6}), y = fx.random({2, 3});
    run("slice", [=] { return slice(x, 1, 3, 2, 3); }, {x}, op_opts);
    run("assemble",
        [=] {
          return assemble(7, 7, std::vector<Block<double>>{{x, 0, 0}, {y, 5, 4}});
        },
        {x, y}, op_opts);
  }
  {
    ParameterSet<double> ps;
    const std::size_t d = 8;
    auto mha = MhaParams<double>::allocate(ps, "mha.", d, 2, 4);
    ps.initialize(options.seed);
    for (auto& p : ps.items()) {
      for (auto& v : p.value.data()) {
        v = std::normal_distribution<double>(0.0, 0.5)(fx.rng());
      }
    }
    std::vector<Tensor<double>> inputs;
    for (auto& p : ps.items()) {
      inputs.push_back(p.value);
    }
    auto x = fx.random({5, d});
    auto with_x = inputs;
    with_x.push_back(x);
    AttentionMask rc1{{5}, 1};
    const DropoutSpec none{};
    run("attend(rc=1)", [=] { return attend(x, mha, 1, rc1, none); }, with_x, op_opts);

    auto xb = fx.random({8, d});
    auto with_xb = inputs;
    with_xb.push_back(xb);
    AttentionMask padded{{4, 3}, std::nullopt};
    const DropoutSpec drop{0.2, Mode::kTrain, RngKey::from({options.seed, 5})};
    run("multi_head_attention(padded,dropout)",
        [=] { return multi_head_attention(xb, mha, padded, drop); }, with_xb, op_opts);
  }
  {
    EncoderConfig cfg = EncoderConfig::standard(FrontendMethod::kNone, 64, 1, 4);
    ParameterSet<double> ps;
    auto layer = TransformerLayerParams<double>::allocate(ps, "l.", cfg);
    ps.initialize(options.seed);
    for (auto& p : ps.items()) {
      for (auto& v : p.value.data()) {
        v += std::normal_distribution<double>(0.0, 0.1)(fx.rng());
      }
    }
    std::vector<Tensor<double>> inputs;
    for (auto& p : ps.items()) {
      inputs.push_back(p.value);
    }
    auto x = fx.random({6, 64});
    inputs.push_back(x);
    LayerContext ctx;
    ctx.dropout = 0.1;
    ctx.mode = Mode::kTrain;
    ctx.key = RngKey::from({options.seed, 7});
    AttentionMask mask{{6}, 2};
    run("transformer_layer", [=] { return transformer_layer(x, layer, mask, ctx); }, inputs,
        big_opts);
  }
  for (auto method : {FrontendMethod::kNone, FrontendMethod::kSinusoid,
                      FrontendMethod::kFrameStacking, FrontendMethod::kConvolution}) {
    ParameterSet<double> ps;
    FrontendConfig fc;
    fc.method = method;
    fc.block1_channels = 4;
    fc.block2_channels = 8;
    Frontend<double> frontend(fc, 16, ps);
    ps.initialize(options.seed);
    for (auto& p : ps.items()) {
      for (auto& v : p.value.data()) {
        v += std::normal_distribution<double>(0.0, 0.1)(fx.rng());
      }
    }
    std::vector<Tensor<double>> inputs;
    for (auto& p : ps.items()) {
      inputs.push_back(p.value);
    }
    const FeatureSequence feats = random_features(9, fx.rng());
    run("frontend(" + std::string(to_string(method)) + ")",
        [frontend, feats] { return frontend.forward(feats); }, inputs, big_opts);
  }

  for (auto method : {FrontendMethod::kConvolution, FrontendMethod::kFrameStacking}) {
    EncoderConfig cfg = EncoderConfig::standard(method, 64, 2, 6);
    cfg.iterated_loss = IteratedLossConfig{{1}, 16, 0.3};
    results.push_back(check_model_gradients(cfg, options.end_to_end_samples, options.seed,
                                            options.end_to_end_tolerance));
  }
  return results;
}

}  // namespace trf
