// dialemb/config.hpp
//
// Copyright 2026 dialemb authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dialemb/corpus.hpp"
#include "dialemb/encoder.hpp"
#include "dialemb/error.hpp"
#include "dialemb/optimizer.hpp"
#include "dialemb/rejection.hpp"

#include "json.hpp"

namespace dialemb {

// One JSON document drives every command. Unknown keys are rejected, all
// defaults are resolved up front, and the resolved document is echoed next
// to each output artifact so any run can be reproduced from its echo.

struct EvalSettings {
  int targets_per_speaker = 10;
  double nontarget_ratio = 1.0;
  std::uint64_t seed = 1234;
  double val_fraction = 0.1;  // held-out share of dialogues for validation

  void validate() const {
    require_config(targets_per_speaker >= 1,
                   "eval: targets_per_speaker must be >= 1");
    require_config(nontarget_ratio > 0.0, "eval: nontarget_ratio must be > 0");
    require_config(val_fraction > 0.0 && val_fraction < 1.0,
                   "eval: val_fraction must lie in (0, 1)");
  }
};

struct TrainSettings {
  std::string mode = "pretrain";  // pretrain | finetune
  std::string loss;               // ava | ge2e | aproto; empty = per-mode default
  RejectionConfig rejection;
  int batch_dialogues = 32;  // N; speakers per batch in finetune mode
  int batch_utterances = 2;  // M
  std::int64_t iterations = 2000;
  std::int64_t eval_every = 100;
  std::uint64_t seed = 7;
  AdamConfig optimizer;
  double grad_clip_norm = 5.0;
  EncoderConfig encoder;          // input_dim resolved from the corpus
  int num_labeled_speakers = 0;   // finetune: restrict labels; 0 = all
  int threads = 1;
  bool rejection_diagnostics = false;

  void validate() const {
    require_config(mode == "pretrain" || mode == "finetune",
                   "train: mode must be 'pretrain' or 'finetune'");
    require_config(loss == "ava" || loss == "ge2e" || loss == "aproto",
                   "train: loss must be one of ava, ge2e, aproto");
    rejection.validate();
    require_config(batch_dialogues >= 2, "train: batch_dialogues must be >= 2");
    require_config(batch_utterances >= 2,
                   "train: batch_utterances must be >= 2");
    require_config(iterations >= 0, "train: iterations must be >= 0");
    require_config(eval_every >= 1, "train: eval_every must be >= 1");
    require_config(grad_clip_norm >= 0.0,
                   "train: grad_clip_norm must be >= 0 (0 disables)");
    require_config(optimizer.base_lr > 0.0, "train: base_lr must be > 0");
    require_config(optimizer.decay_factor > 0.0 &&
                       optimizer.decay_factor <= 1.0,
                   "train: decay_factor must lie in (0, 1]");
    require_config(optimizer.decay_interval >= 1,
                   "train: decay_interval must be >= 1");
    require_config(num_labeled_speakers >= 0,
                   "train: num_labeled_speakers must be >= 0");
    require_config(threads >= 1, "train: threads must be >= 1");
  }
};

struct ExperimentConfig {
  CorpusSpec corpus;
  TrainSettings train;
  EvalSettings eval;
  std::string output_dir = "out";

  /// Fills mode-dependent defaults and cross-section fields. Idempotent:
  /// resolving an already-resolved config changes nothing.
  void resolve() {
    if (train.loss.empty())
      train.loss = (train.mode == "finetune") ? "ge2e" : "ava";
    if (train.encoder.input_dim == 0)
      train.encoder.input_dim = corpus.feature_dim;
  }

  void validate() const {
    corpus.validate();
    train.validate();
    eval.validate();
    require_config(train.encoder.input_dim == corpus.feature_dim,
                   "config: encoder input_dim must equal corpus feature_dim");
    require_config(!output_dir.empty(), "config: output_dir must be set");
  }
};

namespace detail {

inline void check_known_keys(const nlohmann::json& j,
                             const std::vector<std::string>& known,
                             const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : known) ok = ok || (it.key() == k);
    require_config(ok, "config: unknown field '" + it.key() + "' in " + where);
  }
}

template <typename T>
void maybe_get(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["corpus"] = corpus_spec_to_json(c.corpus);
  nlohmann::json t;
  t["mode"] = c.train.mode;
  t["loss"] = c.train.loss;
  t["rejection"] = {{"mode", to_string(c.train.rejection.mode)},
                    {"threshold", c.train.rejection.threshold},
                    {"temperature", c.train.rejection.temperature},
                    {"temperature_learnable",
                     c.train.rejection.temperature_learnable}};
  t["batch_dialogues"] = c.train.batch_dialogues;
  t["batch_utterances"] = c.train.batch_utterances;
  t["iterations"] = c.train.iterations;
  t["eval_every"] = c.train.eval_every;
  t["seed"] = c.train.seed;
  t["optimizer"] = {{"base_lr", c.train.optimizer.base_lr},
                    {"decay_factor", c.train.optimizer.decay_factor},
                    {"decay_interval", c.train.optimizer.decay_interval},
                    {"beta1", c.train.optimizer.beta1},
                    {"beta2", c.train.optimizer.beta2},
                    {"epsilon", c.train.optimizer.epsilon}};
  t["grad_clip_norm"] = c.train.grad_clip_norm;
  t["encoder"] = {{"input_dim", c.train.encoder.input_dim},
                  {"num_layers", c.train.encoder.num_layers},
                  {"hidden_dim", c.train.encoder.hidden_dim},
                  {"embed_dim", c.train.encoder.embed_dim}};
  t["num_labeled_speakers"] = c.train.num_labeled_speakers;
  t["threads"] = c.train.threads;
  t["rejection_diagnostics"] = c.train.rejection_diagnostics;
  j["train"] = std::move(t);
  j["eval"] = {{"targets_per_speaker", c.eval.targets_per_speaker},
               {"nontarget_ratio", c.eval.nontarget_ratio},
               {"seed", c.eval.seed},
               {"val_fraction", c.eval.val_fraction}};
  j["output_dir"] = c.output_dir;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::check_known_keys(j, {"corpus", "train", "eval", "output_dir"},
                           "top level");
  if (j.contains("corpus")) c.corpus = corpus_spec_from_json(j.at("corpus"));
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_known_keys(
        t,
        {"mode", "loss", "rejection", "batch_dialogues", "batch_utterances",
         "iterations", "eval_every", "seed", "optimizer", "grad_clip_norm",
         "encoder", "num_labeled_speakers", "threads",
         "rejection_diagnostics"},
        "train");
    detail::maybe_get(t, "mode", c.train.mode);
    detail::maybe_get(t, "loss", c.train.loss);
    if (t.contains("rejection")) {
      const auto& r = t.at("rejection");
      detail::check_known_keys(
          r, {"mode", "threshold", "temperature", "temperature_learnable"},
          "train.rejection");
      if (r.contains("mode"))
        c.train.rejection.mode =
            rejection_mode_from_string(r.at("mode").get<std::string>());
      detail::maybe_get(r, "threshold", c.train.rejection.threshold);
      detail::maybe_get(r, "temperature", c.train.rejection.temperature);
      detail::maybe_get(r, "temperature_learnable",
                        c.train.rejection.temperature_learnable);
    }
    detail::maybe_get(t, "batch_dialogues", c.train.batch_dialogues);
    detail::maybe_get(t, "batch_utterances", c.train.batch_utterances);
    detail::maybe_get(t, "iterations", c.train.iterations);
    detail::maybe_get(t, "eval_every", c.train.eval_every);
    detail::maybe_get(t, "seed", c.train.seed);
    if (t.contains("optimizer")) {
      const auto& o = t.at("optimizer");
      detail::check_known_keys(o,
                               {"base_lr", "decay_factor", "decay_interval",
                                "beta1", "beta2", "epsilon"},
                               "train.optimizer");
      detail::maybe_get(o, "base_lr", c.train.optimizer.base_lr);
      detail::maybe_get(o, "decay_factor", c.train.optimizer.decay_factor);
      detail::maybe_get(o, "decay_interval", c.train.optimizer.decay_interval);
      detail::maybe_get(o, "beta1", c.train.optimizer.beta1);
      detail::maybe_get(o, "beta2", c.train.optimizer.beta2);
      detail::maybe_get(o, "epsilon", c.train.optimizer.epsilon);
    }
    detail::maybe_get(t, "grad_clip_norm", c.train.grad_clip_norm);
    if (t.contains("encoder")) {
      const auto& e = t.at("encoder");
      detail::check_known_keys(
          e, {"input_dim", "num_layers", "hidden_dim", "embed_dim"},
          "train.encoder");
      detail::maybe_get(e, "input_dim", c.train.encoder.input_dim);
      detail::maybe_get(e, "num_layers", c.train.encoder.num_layers);
      detail::maybe_get(e, "hidden_dim", c.train.encoder.hidden_dim);
      detail::maybe_get(e, "embed_dim", c.train.encoder.embed_dim);
    } else {
      c.train.encoder.input_dim = 0;  // resolved from the corpus
    }
    if (!t.contains("encoder") || !t.at("encoder").contains("input_dim"))
      c.train.encoder.input_dim = 0;
    detail::maybe_get(t, "num_labeled_speakers", c.train.num_labeled_speakers);
    detail::maybe_get(t, "threads", c.train.threads);
    detail::maybe_get(t, "rejection_diagnostics",
                      c.train.rejection_diagnostics);
  } else {
    c.train.encoder.input_dim = 0;
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::check_known_keys(
        e, {"targets_per_speaker", "nontarget_ratio", "seed", "val_fraction"},
        "eval");
    detail::maybe_get(e, "targets_per_speaker", c.eval.targets_per_speaker);
    detail::maybe_get(e, "nontarget_ratio", c.eval.nontarget_ratio);
    detail::maybe_get(e, "seed", c.eval.seed);
    detail::maybe_get(e, "val_fraction", c.eval.val_fraction);
  }
  detail::maybe_get(j, "output_dir", c.output_dir);
  c.resolve();
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require_config(in.good(), "config: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  require_config(!j.is_discarded(), "config: invalid JSON in " + path);
  return experiment_config_from_json(j);
}

inline void write_effective_config(const ExperimentConfig& c,
                                   const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require_config(out.good(), "config: cannot write " + path);
  out << experiment_config_to_json(c).dump(2) << "\n";
  require_config(out.good(), "config: write failed for " + path);
}

}  // namespace dialemb
