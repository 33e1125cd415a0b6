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

#include "trfam/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "trfam/rng.hpp"

namespace trf {

namespace {

// Distinct RNG domains derived from the experiment seed.
constexpr std::uint64_t kDomainDropout = 1;
constexpr std::uint64_t kDomainAugment = 2;
constexpr std::uint64_t kDomainShuffle = 3;

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

// Single-producer, single-consumer queue with a fixed capacity.
template <typename Item>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  // False once the queue has been closed.
  bool push(Item item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) {
      return false;
    }
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  std::optional<Item> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) {
      return std::nullopt;
    }
    Item item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<Item> items_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable not_empty_, not_full_;
};

}  // namespace

double lr_at(const LrSchedule& s, std::size_t step) {
  if (s.warmup_steps == 0 || step >= s.warmup_steps) {
    return s.peak;
  }
  const double frac = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  return s.warmup_start + (s.peak - s.warmup_start) * frac;
}

std::size_t Batch::valid_frames() const {
  std::size_t n = 0;
  for (const auto* s : items) {
    n += s->features.num_frames();
  }
  return n;
}

std::vector<Batch> make_batches(std::span<const LabeledSegment> segments,
                                std::size_t max_frames_per_batch) {
  std::vector<std::size_t> order(segments.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return segments[a].features.num_frames() < segments[b].features.num_frames();
  });
  std::vector<Batch> batches;
  Batch current;
  for (auto i : order) {
    const std::size_t len = segments[i].features.num_frames();
    if (len > max_frames_per_batch) {
      throw std::invalid_argument("segment " + segments[i].features.utterance_id + " has " +
                                  std::to_string(len) + " frames, more than the batch cap of " +
                                  std::to_string(max_frames_per_batch));
    }
    // Sorted ascending, so len is the new longest.
    if (!current.items.empty() && (current.items.size() + 1) * len > max_frames_per_batch) {
      batches.push_back(std::move(current));
      current = Batch{};
    }
    current.items.push_back(&segments[i]);
    current.max_frames = len;
  }
  if (!current.items.empty()) {
    batches.push_back(std::move(current));
  }
  return batches;
}

Adam::Adam(const AdamConfig& config, const ParameterSet<float>& params) : config_(config) {
  for (const auto& p : params.items()) {
    m_.emplace_back(p.value.size(), 0.0f);
    v_.emplace_back(p.value.size(), 0.0f);
  }
}

void Adam::step(ParameterSet<float>& params, double lr) {
  if (params.size() != m_.size()) {
    throw std::logic_error("Adam: parameter set changed size");
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params.items()[k];
    if (!p.value.has_grad()) {
      continue;
    }
    auto w = p.value.data();
    auto g = std::as_const(p.value).grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
      w[i] = static_cast<float>(w[i] - update);
    }
  }
}

void CheckpointRing::push(Checkpoint c) {
  items_.push_back(std::move(c));
  while (items_.size() > capacity_) {
    items_.pop_front();
  }
}

Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty()) {
    throw std::invalid_argument("average_checkpoints: no checkpoints");
  }
  const Checkpoint& first = checkpoints.front();
  Checkpoint out;
  out.config = first.config;
  out.kind = first.kind;
  out.provenance = first.provenance;
  for (const auto& [name, t] : first.tensors) {
    std::vector<double> acc(t.size(), 0.0);
    for (const auto& c : checkpoints) {
      const auto* other = c.find(name);
      if (!other || other->shape() != t.shape()) {
        throw ShapeError("average_checkpoints: tensor " + name +
                         " is missing or differs in shape");
      }
      auto v = other->data();
      for (std::size_t i = 0; i < v.size(); ++i) {
        acc[i] += v[i];
      }
    }
    std::vector<float> mean(acc.size());
    const double n = static_cast<double>(checkpoints.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
      mean[i] = static_cast<float>(acc[i] / n);
    }
    out.tensors.emplace_back(name, Tensor<float>(t.shape(), std::move(mean)));
  }
  for (const auto& c : checkpoints) {
    if (c.tensors.size() != first.tensors.size()) {
      throw ShapeError("average_checkpoints: checkpoints hold different tensor sets");
    }
  }
  return out;
}

Checkpoint average_checkpoints(const CheckpointRing& ring) {
  std::vector<Checkpoint> items(ring.items().begin(), ring.items().end());
  return average_checkpoints(std::span<const Checkpoint>(items));
}

TrainState::TrainState(const EncoderConfig& encoder, const TrainConfig& train)
    : config(train), model(encoder), optimizer(train.adam, model.parameters()) {
  model.initialize(train.seed);
}

StepMetrics train_step(TrainState& state, const Batch& batch) {
  const auto start = std::chrono::steady_clock::now();
  if (batch.items.empty()) {
    throw std::invalid_argument("train_step: empty batch");
  }
  auto& model = state.model;
  auto& params = model.parameters();
  StepMetrics m;
  m.step = state.step;
  m.lr = lr_at(state.config.schedule, state.step);

  std::vector<const FeatureSequence*> feats;
  std::vector<const std::vector<int>*> labels;
  for (const auto* s : batch.items) {
    feats.push_back(&s->features);
    labels.push_back(&s->labels);
  }

  params.zero_grad();
  {
    Tape<float> tape;
    typename Tape<float>::Scope scope(tape);
    const auto key = RngKey::from({state.config.seed, kDomainDropout, state.step});
    auto enc = model.encode(std::span<const FeatureSequence* const>(feats),
                            model.train_options(key));
    const auto targets = pack_targets(std::span<const std::vector<int>* const>(labels),
                                      enc.lengths, enc.max_length);
    auto loss = model.loss(enc, targets);
    m.loss = loss.total.item();
    m.final_ce = loss.final_ce;
    m.frames = loss.frames;
    if (!std::isfinite(m.loss)) {
      throw NumericError("non-finite loss " + std::to_string(m.loss) + " at step " +
                             std::to_string(state.step),
                         state.step);
    }
    tape.backward(loss.total);
  }

  double sq = 0.0;
  for (const auto& p : params.items()) {
    if (p.value.has_grad()) {
      for (float g : std::as_const(p.value).grad()) {
        sq += static_cast<double>(g) * g;
      }
    }
  }
  m.grad_norm = std::sqrt(sq);
  if (!std::isfinite(m.grad_norm)) {
    throw NumericError("non-finite gradient norm at step " + std::to_string(state.step),
                       state.step);
  }
  if (state.config.clip_norm && m.grad_norm > *state.config.clip_norm) {
    const float s = static_cast<float>(*state.config.clip_norm / m.grad_norm);
    for (auto& p : params.items()) {
      if (p.value.has_grad()) {
        for (auto& g : p.value.grad()) {
          g *= s;
        }
      }
    }
  }
  state.optimizer.step(params, m.lr);
  for (auto& p : params.items()) {
    p.value.clear_grad();
  }
  ++state.step;
  m.wall_ms = elapsed_ms(start);
  return m;
}

std::vector<LabeledSegment> augment_batch(const Batch& batch, const TrainConfig& config,
                                          std::size_t step) {
  std::vector<LabeledSegment> out;
  out.reserve(batch.items.size());
  const bool active = config.spec_augment && !config.spec_augment_policy.is_noop();
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    if (!active) {
      out.push_back(*batch.items[i]);
      continue;
    }
    std::mt19937_64 rng(RngKey::from({config.seed, kDomainAugment, step, i}).value);
    out.push_back({spec_augment(batch.items[i]->features, config.spec_augment_policy, rng),
                   batch.items[i]->labels});
  }
  return out;
}

EvalMetrics evaluate(const AcousticModel<float>& model, std::span<const LabeledSegment> corpus,
                     const ForwardOptions& options, std::size_t max_frames_per_batch) {
  EvalMetrics out;
  if (corpus.empty()) {
    return out;
  }
  std::size_t longest = 0;
  for (const auto& s : corpus) {
    longest = std::max(longest, s.features.num_frames());
  }
  const auto batches = make_batches(corpus, std::max(max_frames_per_batch, longest));
  double ce_sum = 0.0;
  std::size_t errors = 0;
  for (const auto& batch : batches) {
    std::vector<const FeatureSequence*> feats;
    for (const auto* s : batch.items) {
      feats.push_back(&s->features);
    }
    const auto enc = model.encode(std::span<const FeatureSequence* const>(feats), options);
    const Tensor<float> logits = model.output_head(enc.final);
    const std::size_t k = logits.dim(1);
    auto v = logits.data();
    for (std::size_t b = 0; b < batch.items.size(); ++b) {
      const auto& labels = batch.items[b]->labels;
      if (labels.size() != enc.lengths[b]) {
        throw ShapeError("evaluate: " + batch.items[b]->features.utterance_id + " has " +
                         std::to_string(labels.size()) + " labels for " +
                         std::to_string(enc.lengths[b]) + " output frames");
      }
      for (std::size_t t = 0; t < enc.lengths[b]; ++t) {
        const float* row = v.data() + (b * enc.max_length + t) * k;
        const std::size_t arg =
            static_cast<std::size_t>(std::max_element(row, row + k) - row);
        double mx = row[arg], z = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          z += std::exp(static_cast<double>(row[j]) - mx);
        }
        const int y = labels[t];
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
          throw std::out_of_range("evaluate: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(k) + ")");
        }
        ce_sum += mx + std::log(z) - row[y];
        errors += arg != static_cast<std::size_t>(y) ? 1 : 0;
        ++out.frames;
      }
    }
  }
  out.mean_ce = ce_sum / static_cast<double>(out.frames);
  out.frame_error_rate = static_cast<double>(errors) / static_cast<double>(out.frames);
  return out;
}

TrainResult train(TrainState& state, std::span<const LabeledSegment> train_corpus,
                  std::span<const LabeledSegment> dev_corpus, const TrainHooks& hooks) {
  const TrainConfig& cfg = state.config;
  std::vector<LabeledSegment> segments;
  for (const auto& u : train_corpus) {
    for (auto& s : segment(u.features, u.labels, cfg.max_segment_sec)) {
      segments.push_back(std::move(s));
    }
  }
  if (segments.empty()) {
    throw std::invalid_argument("train: empty training corpus");
  }
  TrainResult result;
  auto done = [&] { return cfg.max_steps && state.step >= *cfg.max_steps; };

  while (state.epoch < cfg.max_epochs && !done()) {
    auto batches = make_batches(segments, cfg.max_frames_per_batch);
    std::mt19937_64 shuffle(RngKey::from({cfg.seed, kDomainShuffle, state.epoch}).value);
    std::shuffle(batches.begin(), batches.end(), shuffle);
    if (cfg.max_steps) {
      batches.resize(std::min(batches.size(), *cfg.max_steps - state.step));
    }

    BoundedQueue<std::vector<LabeledSegment>> queue(4);
    const std::size_t first_step = state.step;
    std::thread producer([&] {
      for (std::size_t i = 0; i < batches.size(); ++i) {
        if (!queue.push(augment_batch(batches[i], cfg, first_step + i))) {
          return;
        }
      }
      queue.close();
    });

    double loss_sum = 0.0;
    std::size_t steps = 0;
    try {
      while (auto items = queue.pop()) {
        Batch batch;
        for (const auto& s : *items) {
          batch.items.push_back(&s);
          batch.max_frames = std::max(batch.max_frames, s.features.num_frames());
        }
        const StepMetrics m = train_step(state, batch);
        loss_sum += m.loss;
        ++steps;
        result.history.push_back(m);
        if (hooks.on_step) {
          hooks.on_step(m);
        }
      }
    } catch (...) {
      queue.close();
      producer.join();
      throw;
    }
    producer.join();

    EpochReport report;
    report.epoch = state.epoch;
    report.step = state.step;
    report.train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    state.ring.push(make_checkpoint(state.model, CheckpointKind::kTraining));
    if (!dev_corpus.empty()) {
      report.dev = evaluate(state.model, dev_corpus, state.model.eval_options());
      if (!result.best_dev || report.dev->mean_ce < result.best_dev->mean_ce) {
        result.best_dev = report.dev;
        result.best = state.ring.items().back();
      }
    }
    ++state.epoch;
    result.epochs.push_back(report);
    if (hooks.on_epoch) {
      hooks.on_epoch(report, state);
    }
  }

  if (state.ring.size() > 0) {
    result.average = average_checkpoints(state.ring);
    if (!dev_corpus.empty()) {
      const auto averaged = model_from_checkpoint(*result.average);
      result.average_dev = evaluate(averaged, dev_corpus, averaged.eval_options());
    }
  }
  return result;
}

}  // namespace trf
