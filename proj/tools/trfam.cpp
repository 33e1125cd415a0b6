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

// trfam: corpus generation, training, evaluation and model accounting.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 numeric failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "trfam/checkpoint.hpp"
#include "trfam/config.hpp"
#include "trfam/encoder.hpp"
#include "trfam/features.hpp"
#include "trfam/gradcheck.hpp"
#include "trfam/streaming.hpp"
#include "trfam/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitNumeric = 2;

std::string read_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::invalid_argument("cannot read " + path.string());
  }
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Config file first, then --set overrides in order. Flags win.
trf::KeyValues gather_values(const std::string& config_path,
                             const std::vector<std::string>& overrides) {
  trf::KeyValues values;
  if (!config_path.empty()) {
    values = trf::parse_key_values(read_file(config_path));
  }
  std::vector<std::string> problems;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      problems.push_back("--set expects key=value, got '" + o + "'");
      continue;
    }
    values[o.substr(0, eq)] = o.substr(eq + 1);
  }
  if (!problems.empty()) {
    throw trf::ConfigError(std::move(problems));
  }
  return values;
}

void emit_json(const std::string& target, const json& j) {
  if (target.empty()) {
    return;
  }
  if (target == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream os(target);
  if (!os) {
    throw std::invalid_argument("cannot write " + target);
  }
  os << j.dump(2) << '\n';
}

json rc_json(std::optional<std::size_t> rc) {
  return rc ? json(*rc) : json("inf");
}

json lookahead_json(const trf::LookaheadReport& r) {
  return {{"per_layer_rc", rc_json(r.per_layer_rc)},
          {"num_layers", r.num_layers},
          {"frame_period_ms", r.frame_period_ms},
          {"frontend_right_ms", r.frontend_right_ms},
          {"total_lookahead_ms",
           r.total_lookahead_ms ? json(*r.total_lookahead_ms) : json("inf")}};
}

json eval_json(const trf::EvalMetrics& m) {
  return {{"frames", m.frames},
          {"mean_ce", m.mean_ce},
          {"frame_error_rate", m.frame_error_rate}};
}

std::optional<std::size_t> parse_rc(const std::string& text) {
  if (text == "inf" || text == "none") {
    return std::nullopt;
  }
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text.size()) {
    throw trf::ConfigError({"--rc expects a non-negative integer or 'inf', got '" + text + "'"});
  }
  return static_cast<std::size_t>(v);
}

// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  std::string out;
  std::string split = "train";
  trf::ToyCorpusOptions options;
  std::string json_out;
};

int run_gen_corpus(const GenCorpusArgs& a) {
  if (a.split != "train" && a.split != "dev") {
    throw trf::ConfigError({"--split must be train or dev"});
  }
  const auto utts = trf::generate_toy_corpus(a.options, a.split == "train" ? 0 : 1);
  trf::write_corpus(a.out, utts);
  std::size_t frames = 0, labels = 0;
  for (const auto& u : utts) {
    frames += u.features.num_frames();
    labels += u.labels.size();
  }
  std::cout << "wrote " << utts.size() << " utterances (" << frames << " frames, " << labels
            << " labels, " << a.options.num_labels << " classes) to " << a.out << '\n';
  emit_json(a.json_out, {{"command", "gen-corpus"},
                         {"out", a.out},
                         {"split", a.split},
                         {"utterances", utts.size()},
                         {"frames", frames},
                         {"label_frames", labels},
                         {"num_labels", a.options.num_labels},
                         {"seed", a.options.seed}});
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> set;
  std::string json_out;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  const trf::ExperimentConfig cfg =
      trf::experiment_config_from_values(gather_values(a.config, a.set));
  const auto train_corpus = trf::read_corpus(cfg.train_corpus);
  std::vector<trf::LabeledSegment> dev_corpus;
  if (!cfg.dev_corpus.empty()) {
    dev_corpus = trf::read_corpus(cfg.dev_corpus);
  }
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  const std::string provenance = trf::to_text(cfg);
  {
    std::ofstream os(out / "experiment.cfg");
    os << provenance;
  }

  trf::TrainState state(cfg.encoder, cfg.train);
  std::ofstream metrics(out / "metrics.jsonl");
  trf::TrainHooks hooks;
  hooks.on_step = [&](const trf::StepMetrics& m) {
    metrics << json{{"step", m.step},
                    {"loss", m.loss},
                    {"final_ce", m.final_ce},
                    {"lr", m.lr},
                    {"grad_norm", m.grad_norm},
                    {"frames", m.frames},
                    {"wall_ms", m.wall_ms}}
                   .dump()
            << '\n';
    if (!a.quiet && m.step % 50 == 0) {
      std::cout << "step " << m.step << "  loss " << std::setprecision(5) << m.loss << "  lr "
                << m.lr << "  |g| " << m.grad_norm << '\n';
    }
  };
  hooks.on_epoch = [&](const trf::EpochReport& r, const trf::TrainState& s) {
    metrics.flush();
    char name[32];
    std::snprintf(name, sizeof(name), "epoch%03zu.ckpt", r.epoch);
    trf::write_checkpoint(out / name, s.ring.items().back());
    std::cout << "epoch " << r.epoch << "  step " << r.step << "  train loss "
              << std::setprecision(5) << r.train_loss;
    if (r.dev) {
      std::cout << "  dev CE " << r.dev->mean_ce << "  dev FER " << r.dev->frame_error_rate;
    }
    std::cout << '\n';
  };

  const trf::TrainResult result = trf::train(state, train_corpus, dev_corpus, hooks);

  auto save_inference = [&](const trf::Checkpoint& c, const std::string& file) {
    const auto model = trf::model_from_checkpoint(c);
    trf::save_model(out / file, model, trf::CheckpointKind::kInference, provenance);
  };
  save_inference(state.ring.items().back(), "final.ckpt");
  if (result.best) {
    save_inference(*result.best, "best.ckpt");
  }
  if (result.average) {
    save_inference(*result.average, "average.ckpt");
  }

  json report{{"command", "train"},
              {"steps", state.step},
              {"epochs", state.epoch},
              {"final_loss", result.history.empty() ? 0.0 : result.history.back().loss},
              {"config", provenance}};
  if (result.best_dev) {
    report["best_dev"] = eval_json(*result.best_dev);
  }
  if (result.average_dev) {
    report["average_dev"] = eval_json(*result.average_dev);
  }
  std::ofstream(out / "report.json") << report.dump(2) << '\n';
  emit_json(a.json_out, report);
  std::cout << "trained " << state.step << " steps over " << state.epoch << " epochs; ";
  if (result.best_dev) {
    std::cout << "best dev CE " << result.best_dev->mean_ce;
  }
  if (result.average_dev) {
    std::cout << ", averaged dev CE " << result.average_dev->mean_ce;
  }
  std::cout << "\ncheckpoints in " << out << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string corpus;
  std::vector<std::string> rc = {"inf"};
  std::string csv;
  std::string json_out;
};

int run_eval(const EvalArgs& a) {
  std::vector<std::optional<std::size_t>> rcs;
  for (const auto& r : a.rc) {
    rcs.push_back(parse_rc(r));
  }
  const auto model = trf::load_model(a.checkpoint);
  const auto corpus = trf::read_corpus(a.corpus);
  std::vector<trf::RcEvaluation> rows;
  json j{{"command", "eval"}, {"checkpoint", a.checkpoint}, {"corpus", a.corpus}};
  std::cout << std::left << std::setw(6) << "rc" << std::setw(12) << "mean_ce" << std::setw(12)
            << "FER" << "lookahead_ms\n";
  for (auto rc : rcs) {
    rows.push_back(trf::eval_with_rc(model, corpus, rc));
    const auto& r = rows.back();
    std::cout << std::setw(6) << trf::rc_label(rc) << std::setw(12) << std::setprecision(5)
              << r.metrics.mean_ce << std::setw(12) << r.metrics.frame_error_rate
              << (r.lookahead.total_lookahead_ms ? std::to_string(*r.lookahead.total_lookahead_ms)
                                                 : std::string("inf"))
              << '\n';
    json row = eval_json(r.metrics);
    row["lookahead"] = lookahead_json(r.lookahead);
    j["results"].push_back(row);
  }
  if (!a.csv.empty()) {
    trf::write_rc_csv(a.csv, rows);
  }
  emit_json(a.json_out, j);
  return kExitOk;
}

struct GradcheckArgs {
  std::string config;
  std::vector<std::string> set;
  std::size_t samples = 0;
  std::size_t model_samples = 24;
  std::uint64_t seed = 1;
  std::string json_out;
};

int run_gradcheck(const GradcheckArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  trf::GradSuiteOptions o;
  o.samples = a.samples;
  o.end_to_end_samples = a.model_samples;
  o.seed = a.seed;
  auto results = trf::run_gradient_suite(o);
  if (!a.config.empty() || !a.set.empty()) {
    const auto cfg = trf::encoder_config_from_values(gather_values(a.config, a.set));
    results.push_back(trf::check_model_gradients(cfg, a.model_samples, a.seed));
  }
  bool ok = true;
  json j{{"command", "gradcheck"}};
  std::cout << std::left << std::setw(48) << "check" << std::setw(9) << "entries"
            << std::setw(14) << "max_rel_err" << std::setw(10) << "tol" << "result\n";
  for (const auto& r : results) {
    ok = ok && r.passed();
    std::cout << std::setw(48) << r.name << std::setw(9) << r.checked << std::setw(14)
              << std::setprecision(3) << std::scientific << r.max_rel_error << std::setw(10)
              << r.tolerance << std::defaultfloat << (r.passed() ? "PASS" : "FAIL") << '\n';
    j["checks"].push_back({{"name", r.name},
                           {"entries", r.checked},
                           {"max_rel_error", r.max_rel_error},
                           {"max_abs_error", r.max_abs_error},
                           {"worst_analytic", r.worst_analytic},
                           {"worst_numeric", r.worst_numeric},
                           {"tolerance", r.tolerance},
                           {"passed", r.passed()}});
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  j["seconds"] = secs;
  j["passed"] = ok;
  std::cout << (ok ? "all checks passed" : "GRADIENT CHECK FAILED") << " in "
            << std::setprecision(3) << secs << " s\n";
  emit_json(a.json_out, j);
  return ok ? kExitOk : kExitNumeric;
}

struct ModelArgs {
  std::string config;
  std::vector<std::string> set;
  std::string json_out;
  std::string rc = "inf";
};

int run_params(const ModelArgs& a) {
  const auto cfg = trf::encoder_config_from_values(gather_values(a.config, a.set));
  const auto c = trf::count_parameters(cfg);
  json j{{"command", "params"}, {"inference", c.inference}, {"training_only", c.training_only},
         {"total", c.total()}};
  std::cout << std::left;
  for (const auto& [name, n] : c.breakdown) {
    std::cout << std::setw(22) << name << std::right << std::setw(14) << n << std::left << '\n';
    j["breakdown"][name] = n;
  }
  std::cout << std::setw(22) << "inference" << std::right << std::setw(14) << c.inference
            << std::left << "  (" << std::setprecision(4) << c.inference / 1e6 << "M)\n"
            << std::setw(22) << "training only" << std::right << std::setw(14)
            << c.training_only << std::left << "  (" << c.training_only / 1e6 << "M)\n";
  emit_json(a.json_out, j);
  return kExitOk;
}

int run_lookahead(const ModelArgs& a) {
  const auto cfg = trf::encoder_config_from_values(gather_values(a.config, a.set));
  const auto r = trf::total_lookahead(cfg, parse_rc(a.rc));
  std::cout << r.to_text();
  json j = lookahead_json(r);
  j["command"] = "lookahead";
  emit_json(a.json_out, j);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer acoustic model toolkit"};
  app.require_subcommand(1);

  GenCorpusArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Write a synthetic labelled corpus");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--split", gen.split, "train or dev (independent sampling streams)");
  gen_cmd->add_option("--num-utts", gen.options.num_utts, "Number of utterances");
  gen_cmd->add_option("--num-labels", gen.options.num_labels, "Label inventory size");
  gen_cmd->add_option("--min-sec", gen.options.min_sec, "Shortest utterance (s)");
  gen_cmd->add_option("--max-sec", gen.options.max_sec, "Longest utterance (s)");
  gen_cmd->add_option("--seed", gen.options.seed, "Task seed");
  gen_cmd->add_option("--json", gen.json_out, "Write a JSON report ('-' for stdout)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model from an experiment config");
  train_cmd->add_option("--config", tr.config, "Experiment config (key=value)");
  train_cmd->add_option("--set", tr.set, "Override key=value (repeatable)");
  train_cmd->add_flag("--quiet", tr.quiet, "Only report epochs");
  train_cmd->add_option("--json", tr.json_out, "Write a JSON report ('-' for stdout)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint under right-context limits");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--corpus", ev.corpus, "Corpus directory")->required();
  eval_cmd->add_option("--rc", ev.rc, "Per-layer right context, N or inf (repeatable)");
  eval_cmd->add_option("--csv", ev.csv, "Write rc,frame_error_rate,mean_ce,lookahead_ms");
  eval_cmd->add_option("--json", ev.json_out, "Write a JSON report ('-' for stdout)");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gc_cmd->add_option("--config", gc.config, "Also check a model of this architecture");
  gc_cmd->add_option("--set", gc.set, "Architecture override key=value (repeatable)");
  gc_cmd->add_option("--samples", gc.samples, "Entries per op input (0 = all)");
  gc_cmd->add_option("--model-samples", gc.model_samples, "Entries per model parameter");
  gc_cmd->add_option("--seed", gc.seed, "Seed");
  gc_cmd->add_option("--json", gc.json_out, "Write a JSON report ('-' for stdout)");

  ModelArgs pa;
  auto* params_cmd = app.add_subcommand("params", "Parameter counts by component");
  params_cmd->add_option("--config", pa.config, "Encoder or experiment config");
  params_cmd->add_option("--set", pa.set, "Override key=value (repeatable)");
  params_cmd->add_option("--json", pa.json_out, "Write a JSON report ('-' for stdout)");

  ModelArgs la;
  auto* la_cmd = app.add_subcommand("lookahead", "Total lookahead of a right-context limit");
  la_cmd->add_option("--config", la.config, "Encoder or experiment config");
  la_cmd->add_option("--set", la.set, "Override key=value (repeatable)");
  la_cmd->add_option("--rc", la.rc, "Per-layer right context, N or inf");
  la_cmd->add_option("--json", la.json_out, "Write a JSON report ('-' for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*gen_cmd) return run_gen_corpus(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*gc_cmd) return run_gradcheck(gc);
    if (*params_cmd) return run_params(pa);
    if (*la_cmd) return run_lookahead(la);
  } catch (const trf::ConfigError& e) {
    std::cerr << "configuration errors:\n";
    for (const auto& p : e.problems()) {
      std::cerr << "  - " << p << '\n';
    }
    return kExitInvalid;
  } catch (const trf::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
  return kExitInvalid;
}
