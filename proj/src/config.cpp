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

#include "trfam/config.hpp"

#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>

namespace trf {

namespace {

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) {
      out += sep;
    }
    out += items[i];
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Reads typed values out of a KeyValues map, collecting every problem.
class Reader {
 public:
  explicit Reader(const KeyValues& values) : values_(values) {}

  template <typename Int>
  void integer(const std::string& key, Int& out) {
    const auto* v = get(key);
    if (!v) {
      return;
    }
    Int parsed{};
    const auto* end = v->data() + v->size();
    auto [ptr, ec] = std::from_chars(v->data(), end, parsed);
    if (ec != std::errc() || ptr != end) {
      bad(key, *v, "an integer");
      return;
    }
    out = parsed;
  }

  void real(const std::string& key, double& out) {
    const auto* v = get(key);
    if (!v) {
      return;
    }
    try {
      std::size_t pos = 0;
      const double parsed = std::stod(*v, &pos);
      if (pos != v->size()) {
        throw std::invalid_argument(*v);
      }
      out = parsed;
    } catch (const std::exception&) {
      bad(key, *v, "a number");
    }
  }

  void boolean(const std::string& key, bool& out) {
    const auto* v = get(key);
    if (!v) {
      return;
    }
    if (*v == "true" || *v == "1") {
      out = true;
    } else if (*v == "false" || *v == "0") {
      out = false;
    } else {
      bad(key, *v, "true or false");
    }
  }

  void text(const std::string& key, std::string& out) {
    if (const auto* v = get(key)) {
      out = *v;
    }
  }

  // "inf" / "none" map to nullopt.
  template <typename Int>
  void optional_integer(const std::string& key, std::optional<Int>& out) {
    const auto* v = get(key);
    if (!v) {
      return;
    }
    if (*v == "inf" || *v == "none") {
      out.reset();
      return;
    }
    Int parsed{};
    integer(key, parsed);
    out = parsed;
  }

  void optional_real(const std::string& key, std::optional<double>& out) {
    const auto* v = get(key);
    if (!v) {
      return;
    }
    if (*v == "none") {
      out.reset();
      return;
    }
    double parsed = 0;
    real(key, parsed);
    out = parsed;
  }

  void size_list(const std::string& key, std::optional<std::vector<std::size_t>>& out) {
    const auto* v = get(key);
    if (!v) {
      return;
    }
    if (*v == "none" || v->empty()) {
      out.reset();
      return;
    }
    std::vector<std::size_t> items;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      std::size_t parsed = 0;
      auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), parsed);
      if (ec != std::errc() || ptr != item.data() + item.size()) {
        bad(key, *v, "a comma-separated list of layer indices");
        return;
      }
      items.push_back(parsed);
    }
    out = std::move(items);
  }

  const std::string* get(const std::string& key) {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
  }

  void bad(const std::string& key, const std::string& value, const char* expected) {
    problems_.push_back(key + ": '" + value + "' is not " + expected);
  }

  void problem(std::string p) { problems_.push_back(std::move(p)); }

  std::vector<std::string> finish() {
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) {
        problems_.push_back("unknown key '" + k + "'");
      }
    }
    return std::move(problems_);
  }

 private:
  const KeyValues& values_;
  std::set<std::string> used_;
  std::vector<std::string> problems_;
};

void read_encoder(Reader& r, EncoderConfig& c) {
  if (const auto* v = r.get("format"); v && *v != "trfam-encoder-1") {
    r.bad("format", *v, "trfam-encoder-1");
  }
  if (const auto* v = r.get("frontend")) {
    if (auto m = parse_frontend_method(*v)) {
      c.frontend.method = *m;
    } else {
      r.bad("frontend", *v, "one of none, sinusoid, frame_stacking, convolution");
    }
  }
  r.integer("vgg_block1_channels", c.frontend.block1_channels);
  r.integer("vgg_block2_channels", c.frontend.block2_channels);
  r.integer("model_dim", c.model_dim);
  r.integer("num_layers", c.num_layers);
  r.integer("num_heads", c.num_heads);
  r.integer("ffn_dim", c.ffn_dim);
  r.real("dropout", c.dropout);
  r.real("layernorm_eps", c.layernorm_eps);
  r.integer("num_outputs", c.num_outputs);
  r.optional_integer("right_context", c.right_context);
  if (const auto* v = r.get("beta_denominator")) {
    if (*v == "head_dim") {
      c.beta_denominator = BetaDenominator::kHeadDim;
    } else if (*v == "model_dim") {
      c.beta_denominator = BetaDenominator::kModelDim;
    } else {
      r.bad("beta_denominator", *v, "head_dim or model_dim");
    }
  }
  std::optional<std::vector<std::size_t>> taps;
  if (c.iterated_loss) {
    taps = c.iterated_loss->tap_layers;
  }
  r.size_list("iterated_loss_taps", taps);
  IteratedLossConfig il = c.iterated_loss.value_or(IteratedLossConfig{});
  r.integer("iterated_loss_proj_dim", il.proj_dim);
  r.real("iterated_loss_weight", il.weight);
  if (taps) {
    il.tap_layers = *taps;
    c.iterated_loss = il;
  } else {
    c.iterated_loss.reset();
  }
}

void read_train(Reader& r, TrainConfig& t) {
  r.real("lr_warmup_start", t.schedule.warmup_start);
  r.real("lr_peak", t.schedule.peak);
  r.integer("lr_warmup_steps", t.schedule.warmup_steps);
  r.real("adam_beta1", t.adam.beta1);
  r.real("adam_beta2", t.adam.beta2);
  r.real("adam_eps", t.adam.eps);
  r.boolean("spec_augment", t.spec_augment);
  r.integer("specaug_freq_masks", t.spec_augment_policy.num_freq_masks);
  r.integer("specaug_freq_width", t.spec_augment_policy.max_freq_width);
  r.integer("specaug_time_masks", t.spec_augment_policy.num_time_masks);
  r.integer("specaug_time_width", t.spec_augment_policy.max_time_width);
  r.real("specaug_time_fraction", t.spec_augment_policy.max_time_fraction);
  r.integer("max_frames_per_batch", t.max_frames_per_batch);
  r.real("max_segment_sec", t.max_segment_sec);
  r.optional_real("clip_norm", t.clip_norm);
  r.integer("max_epochs", t.max_epochs);
  r.optional_integer("max_steps", t.max_steps);
  r.integer("seed", t.seed);
}

std::string optional_text(const std::optional<std::size_t>& v, const char* none) {
  return v ? std::to_string(*v) : std::string(none);
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument("invalid configuration: " + join(problems, "; ")),
      problems_(std::move(problems)) {}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Prefer the shortest representation that still round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    if (std::stod(shorter) == v) {
      return shorter;
    }
  }
  return buf;
}

EncoderConfig EncoderConfig::standard(FrontendMethod method, std::size_t model_dim,
                                      std::size_t num_layers, std::size_t num_outputs) {
  EncoderConfig c;
  c.frontend.method = method;
  c.model_dim = model_dim;
  c.num_layers = num_layers;
  c.num_heads = model_dim / kHeadDim;
  c.ffn_dim = 4 * model_dim;
  c.num_outputs = num_outputs;
  return c;
}

std::vector<std::string> EncoderConfig::problems() const {
  std::vector<std::string> p;
  if (model_dim == 0 || model_dim % kHeadDim != 0) {
    p.push_back("model_dim must be a positive multiple of 64");
  }
  if (num_heads * kHeadDim != model_dim) {
    p.push_back("num_heads must equal model_dim / 64 (per-head dimension is 64)");
  }
  if (ffn_dim != 4 * model_dim) {
    p.push_back("ffn_dim must equal 4 * model_dim");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    p.push_back("dropout must be in [0, 1)");
  }
  if (!(layernorm_eps > 0.0)) {
    p.push_back("layernorm_eps must be positive");
  }
  if (num_outputs == 0) {
    p.push_back("num_outputs must be positive");
  }
  if (frontend.method == FrontendMethod::kConvolution &&
      (frontend.block1_channels == 0 || frontend.block2_channels == 0)) {
    p.push_back("VGG channel counts must be positive");
  }
  if (iterated_loss) {
    if (iterated_loss->tap_layers.empty()) {
      p.push_back("iterated_loss_taps must list at least one layer (or be 'none')");
    }
    std::set<std::size_t> seen;
    for (auto l : iterated_loss->tap_layers) {
      if (l < 1 || l >= num_layers) {
        p.push_back("iterated loss tap " + std::to_string(l) + " outside [1, num_layers)");
      }
      if (!seen.insert(l).second) {
        p.push_back("iterated loss tap " + std::to_string(l) + " listed twice");
      }
    }
    if (iterated_loss->proj_dim == 0) {
      p.push_back("iterated_loss_proj_dim must be positive");
    }
    if (!(iterated_loss->weight >= 0.0)) {
      p.push_back("iterated_loss_weight must be non-negative");
    }
  }
  return p;
}

void EncoderConfig::validate() const {
  auto p = problems();
  if (!p.empty()) {
    throw ConfigError(std::move(p));
  }
}

std::vector<std::string> ExperimentConfig::problems() const {
  auto p = encoder.problems();
  const auto& s = train.schedule;
  if (!(s.warmup_start >= 0.0) || !(s.peak > 0.0)) {
    p.push_back("learning rates must be non-negative with a positive peak");
  }
  if (!(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0) ||
      !(train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0) || !(train.adam.eps > 0.0)) {
    p.push_back("Adam betas must be in [0, 1) and eps positive");
  }
  if (!(train.spec_augment_policy.max_time_fraction >= 0.0 &&
        train.spec_augment_policy.max_time_fraction <= 1.0)) {
    p.push_back("specaug_time_fraction must be in [0, 1]");
  }
  if (train.max_frames_per_batch == 0) {
    p.push_back("max_frames_per_batch must be positive");
  }
  if (!(train.max_segment_sec > 0.0)) {
    p.push_back("max_segment_sec must be positive");
  }
  if (train.clip_norm && !(*train.clip_norm > 0.0)) {
    p.push_back("clip_norm must be positive or 'none'");
  }
  if (train_corpus.empty()) {
    p.push_back("train_corpus is required");
  }
  if (output_dir.empty()) {
    p.push_back("output_dir is required");
  }
  return p;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues out;
  std::vector<std::string> problems;
  std::istringstream is(text);
  std::string line;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.resize(hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(lineno) + ": expected key=value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      problems.push_back("line " + std::to_string(lineno) + ": empty key");
      continue;
    }
    if (out.count(key)) {
      problems.push_back("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    out[key] = trim(line.substr(eq + 1));
  }
  if (!problems.empty()) {
    throw ConfigError(std::move(problems));
  }
  return out;
}

std::string to_text(const EncoderConfig& c) {
  std::ostringstream os;
  os << "format=trfam-encoder-1\n";
  os << "frontend=" << to_string(c.frontend.method) << '\n';
  os << "vgg_block1_channels=" << c.frontend.block1_channels << '\n';
  os << "vgg_block2_channels=" << c.frontend.block2_channels << '\n';
  os << "model_dim=" << c.model_dim << '\n';
  os << "num_layers=" << c.num_layers << '\n';
  os << "num_heads=" << c.num_heads << '\n';
  os << "ffn_dim=" << c.ffn_dim << '\n';
  os << "dropout=" << format_double(c.dropout) << '\n';
  os << "layernorm_eps=" << format_double(c.layernorm_eps) << '\n';
  os << "num_outputs=" << c.num_outputs << '\n';
  os << "right_context=" << optional_text(c.right_context, "inf") << '\n';
  os << "beta_denominator="
     << (c.beta_denominator == BetaDenominator::kHeadDim ? "head_dim" : "model_dim") << '\n';
  if (c.iterated_loss) {
    std::vector<std::string> taps;
    for (auto l : c.iterated_loss->tap_layers) {
      taps.push_back(std::to_string(l));
    }
    os << "iterated_loss_taps=" << join(taps, ",") << '\n';
    os << "iterated_loss_proj_dim=" << c.iterated_loss->proj_dim << '\n';
    os << "iterated_loss_weight=" << format_double(c.iterated_loss->weight) << '\n';
  } else {
    os << "iterated_loss_taps=none\n";
  }
  return os.str();
}

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os << to_text(c.encoder);
  const auto& t = c.train;
  os << "lr_warmup_start=" << format_double(t.schedule.warmup_start) << '\n';
  os << "lr_peak=" << format_double(t.schedule.peak) << '\n';
  os << "lr_warmup_steps=" << t.schedule.warmup_steps << '\n';
  os << "adam_beta1=" << format_double(t.adam.beta1) << '\n';
  os << "adam_beta2=" << format_double(t.adam.beta2) << '\n';
  os << "adam_eps=" << format_double(t.adam.eps) << '\n';
  os << "spec_augment=" << (t.spec_augment ? "true" : "false") << '\n';
  os << "specaug_freq_masks=" << t.spec_augment_policy.num_freq_masks << '\n';
  os << "specaug_freq_width=" << t.spec_augment_policy.max_freq_width << '\n';
  os << "specaug_time_masks=" << t.spec_augment_policy.num_time_masks << '\n';
  os << "specaug_time_width=" << t.spec_augment_policy.max_time_width << '\n';
  os << "specaug_time_fraction=" << format_double(t.spec_augment_policy.max_time_fraction)
     << '\n';
  os << "max_frames_per_batch=" << t.max_frames_per_batch << '\n';
  os << "max_segment_sec=" << format_double(t.max_segment_sec) << '\n';
  os << "clip_norm=" << (t.clip_norm ? format_double(*t.clip_norm) : "none") << '\n';
  os << "max_epochs=" << t.max_epochs << '\n';
  os << "max_steps=" << optional_text(t.max_steps, "none") << '\n';
  os << "seed=" << t.seed << '\n';
  os << "train_corpus=" << c.train_corpus << '\n';
  os << "dev_corpus=" << c.dev_corpus << '\n';
  os << "output_dir=" << c.output_dir << '\n';
  return os.str();
}

EncoderConfig encoder_config_from_text(const std::string& text) {
  const KeyValues values = parse_key_values(text);
  Reader r(values);
  EncoderConfig c;
  read_encoder(r, c);
  auto problems = r.finish();
  if (problems.empty()) {
    problems = c.problems();
  }
  if (!problems.empty()) {
    throw ConfigError(std::move(problems));
  }
  return c;
}

ExperimentConfig experiment_config_from_values(const KeyValues& values) {
  Reader r(values);
  ExperimentConfig c;
  read_encoder(r, c.encoder);
  read_train(r, c.train);
  r.text("train_corpus", c.train_corpus);
  r.text("dev_corpus", c.dev_corpus);
  r.text("output_dir", c.output_dir);
  auto problems = r.finish();
  for (auto& p : c.problems()) {
    problems.push_back(std::move(p));
  }
  if (!problems.empty()) {
    throw ConfigError(std::move(problems));
  }
  return c;
}

EncoderConfig encoder_config_from_values(const KeyValues& values) {
  Reader r(values);
  EncoderConfig c;
  read_encoder(r, c);
  TrainConfig ignored_train;
  std::string ignored_text;
  read_train(r, ignored_train);
  for (const char* key : {"train_corpus", "dev_corpus", "output_dir"}) {
    r.text(key, ignored_text);
  }
  auto problems = r.finish();
  for (auto& p : c.problems()) {
    problems.push_back(std::move(p));
  }
  if (!problems.empty()) {
    throw ConfigError(std::move(problems));
  }
  return c;
}

ExperimentConfig experiment_config_from_text(const std::string& text) {
  return experiment_config_from_values(parse_key_values(text));
}

}  // namespace trf
