// dialemb/trainer.hpp
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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dialemb/checkpoint.hpp"
#include "dialemb/config.hpp"
#include "dialemb/corpus.hpp"
#include "dialemb/encoder.hpp"
#include "dialemb/error.hpp"
#include "dialemb/eval.hpp"
#include "dialemb/losses.hpp"
#include "dialemb/matrix.hpp"
#include "dialemb/optimizer.hpp"
#include "dialemb/rejection.hpp"

namespace dialemb {

// Training orchestration. One step: sample an episodic batch, encode every
// utterance, compute the per-utterance loss, derive per-dialogue weights
// from compactness (mode-dependent), take the weighted batch loss, push
// its gradient back through the encoder, and apply one Adam update to the
// joint trainable vector [encoder params | loss scale | temperature].
//
// Per-utterance encoding fans out across worker threads and joins before
// the loss; gradients reduce in utterance order, so results are bitwise
// identical for any thread count.

struct TrainLogRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double mean_compactness = 0.0;
  double mean_weight = 1.0;
  double rejected_fraction = 0.0;
  double temperature = 0.0;
  double lr = 0.0;
  bool has_val_eer = false;
  double val_eer = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRecord> log;
  std::vector<std::string> rejection_log;  // one JSON line per step, if enabled
  bool aborted = false;                    // numeric failure; see abort_message
  std::string abort_message;
  double initial_val_eer = 0.0;  // before any update
  double best_val_eer = 0.0;
  std::int64_t best_step = 0;
  Checkpoint best;  // state at the best validation EER
  Checkpoint last;  // state after the final completed step
};

inline constexpr double kTemperatureFloor = 1e-3;

namespace detail {

inline void parallel_for(int count, int threads,
                         const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  const int chunk = (count + threads - 1) / threads;
  auto run_range = [&fn](int lo, int hi) {
    for (int i = lo; i < hi; ++i) fn(i);
  };
  for (int t = 1; t < threads; ++t) {
    const int lo = t * chunk;
    const int hi = std::min(count, lo + chunk);
    if (lo < hi) pool.emplace_back(run_range, lo, hi);
  }
  run_range(0, std::min(chunk, count));
  for (auto& th : pool) th.join();
}

}  // namespace detail

struct EmbeddedUtterances {
  Matrix embeddings;
  std::vector<int> speakers;
  std::vector<int> dialogue_index;  // position within the given span
};

/// Embeds every utterance of every dialogue in the span (read-only params,
/// so utterances embed concurrently).
inline EmbeddedUtterances embed_utterances(const EncoderParams& params,
                                           std::span<const Dialogue> dialogues,
                                           int threads = 1) {
  std::vector<const UtteranceFeatures*> flat;
  EmbeddedUtterances out;
  for (std::size_t d = 0; d < dialogues.size(); ++d) {
    for (std::size_t j = 0; j < dialogues[d].utterances.size(); ++j) {
      flat.push_back(&dialogues[d].utterances[j]);
      out.speakers.push_back(dialogues[d].true_speaker_ids[j]);
      out.dialogue_index.push_back(static_cast<int>(d));
    }
  }
  out.embeddings = Matrix(static_cast<int>(flat.size()),
                          params.config.embed_dim);
  detail::parallel_for(static_cast<int>(flat.size()), threads, [&](int i) {
    const std::vector<double> e = encode(params, *flat[i]);
    std::copy(e.begin(), e.end(), out.embeddings.row(i).begin());
  });
  return out;
}

/// Compactness of whole dialogues (all utterances, uniform count required).
inline std::vector<double> dialogue_compactness(
    const EncoderParams& params, std::span<const Dialogue> dialogues,
    int threads = 1) {
  require_config(!dialogues.empty(), "dialogue_compactness: empty corpus");
  const int m = static_cast<int>(dialogues[0].utterances.size());
  for (const Dialogue& d : dialogues)
    require_config(static_cast<int>(d.utterances.size()) == m,
                   "dialogue_compactness: utterance counts are not uniform");
  const EmbeddedUtterances emb = embed_utterances(params, dialogues, threads);
  EmbeddingBatch batch;
  batch.n_dialogues = static_cast<int>(dialogues.size());
  batch.utter_per_dialogue = m;
  batch.embeddings = emb.embeddings;
  return compactness(batch);
}

namespace detail {

struct TrainableLayout {
  long encoder_count = 0;
  bool has_scale = false;
  bool has_temperature = false;

  long scale_index() const { return encoder_count; }
  long bias_index() const { return encoder_count + 1; }
  long temperature_index() const {
    return encoder_count + (has_scale ? 2 : 0);
  }
  long total() const {
    return encoder_count + (has_scale ? 2 : 0) + (has_temperature ? 1 : 0);
  }
};

// Fixed trial pairs over the validation split; scores refresh per call.
struct ValidationContext {
  std::span<const Dialogue> dialogues;
  TrialSet trials;
  int threads = 1;

  double eer(const EncoderParams& params) {
    const EmbeddedUtterances emb =
        embed_utterances(params, dialogues, threads);
    score_trials(trials, emb.embeddings);
    return compute_eer(trials).eer;
  }
};

// Episodic sampler over labeled speakers (fine-tuning): N distinct
// speakers per batch, M distinct utterances each.
struct SpeakerPool {
  std::vector<int> speaker_ids;
  std::vector<std::vector<const UtteranceFeatures*>> utterances;

  static SpeakerPool build(std::span<const Dialogue> dialogues,
                           int num_labeled_speakers, int min_utterances) {
    std::map<int, std::vector<const UtteranceFeatures*>> by_speaker;
    for (const Dialogue& d : dialogues)
      for (std::size_t j = 0; j < d.utterances.size(); ++j)
        by_speaker[d.true_speaker_ids[j]].push_back(&d.utterances[j]);
    SpeakerPool pool;
    int taken = 0;
    for (const auto& [spk, utts] : by_speaker) {
      if (num_labeled_speakers > 0 && taken >= num_labeled_speakers) break;
      ++taken;  // the labeled subset counts speakers, usable or not
      if (static_cast<int>(utts.size()) < min_utterances) continue;
      pool.speaker_ids.push_back(spk);
      pool.utterances.push_back(utts);
    }
    return pool;
  }

  EpisodicBatch sample(const EpisodicBatchSpec& spec, Rng& rng) const {
    const int n_speakers = static_cast<int>(speaker_ids.size());
    require_config(n_speakers >= spec.n_dialogues,
                   "finetune: fewer eligible speakers than batch classes");
    std::vector<int> order(n_speakers);
    for (int i = 0; i < n_speakers; ++i) order[i] = i;
    EpisodicBatch batch;
    batch.spec = spec;
    for (int i = 0; i < spec.n_dialogues; ++i) {
      const int pick = i + rng.uniform_int(n_speakers - i);
      std::swap(order[i], order[pick]);
      const int s = order[i];
      batch.dialogue_ids.push_back(speaker_ids[s]);
      batch.dialogue_contaminated.push_back(false);
      const int avail = static_cast<int>(utterances[s].size());
      std::vector<int> slot(avail);
      for (int k = 0; k < avail; ++k) slot[k] = k;
      for (int j = 0; j < spec.m_utterances; ++j) {
        const int spick = j + rng.uniform_int(avail - j);
        std::swap(slot[j], slot[spick]);
        batch.utterances.push_back(*utterances[s][slot[j]]);
        batch.slots.push_back(slot[j]);
        batch.speaker_ids.push_back(speaker_ids[s]);
      }
    }
    return batch;
  }
};

struct StepLoss {
  bool skipped = false;
  PerUtteranceLoss per_utt;
  std::vector<double> weights;
  RejectionReport report;
};

inline PerUtteranceLoss run_loss(const std::string& kind,
                                 const EmbeddingBatch& batch,
                                 const LossScaleParams& scale) {
  if (kind == "ava") return ava_loss(batch);
  if (kind == "ge2e") return ge2e_loss(batch, scale);
  if (kind == "aproto") return aproto_loss(batch, scale);
  throw ConfigError("unknown loss kind: " + kind);
}

// Loss + rejection for one batch. Soft mode reweights only; hard mode
// additionally strikes rejected dialogues from the all-versus-all
// denominators (for the centroid losses hard mode is pure reweighting,
// there is no masked variant to apply). Fewer than two surviving
// dialogues skips the batch.
inline StepLoss compute_step_loss(const EmbeddingBatch& batch,
                                  const std::string& loss_kind,
                                  const RejectionConfig& rejection,
                                  const LossScaleParams& scale) {
  StepLoss out;
  out.report.compactness = compactness(batch);
  switch (rejection.mode) {
    case RejectionMode::kOff: {
      out.per_utt = run_loss(loss_kind, batch, scale);
      out.weights.assign(batch.n_dialogues, 1.0);
      break;
    }
    case RejectionMode::kSoft: {
      out.per_utt = run_loss(loss_kind, batch, scale);
      out.weights = soft_weights(out.report.compactness, rejection);
      if (rejection.temperature_learnable)
        out.report.temperature_grad = temperature_gradient(
            out.report.compactness, rejection, out.per_utt.values);
      break;
    }
    case RejectionMode::kHard: {
      const HardWeights hw = hard_weights(out.report.compactness, rejection);
      out.weights = hw.weights;
      out.report.rejected_count = hw.rejected_count;
      const int accepted = batch.n_dialogues - hw.rejected_count;
      if (accepted < 2) {
        out.skipped = true;
        break;
      }
      if (loss_kind == "ava") {
        std::vector<bool> mask(batch.n_dialogues);
        for (int i = 0; i < batch.n_dialogues; ++i) mask[i] = hw.weights[i] > 0.0;
        auto masked = masked_ava_loss(batch, mask);
        out.skipped = !masked.has_value();
        if (masked) out.per_utt = std::move(*masked);
      } else {
        out.per_utt = run_loss(loss_kind, batch, scale);
      }
      break;
    }
  }
  out.report.weights = out.weights;
  return out;
}

}  // namespace detail

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Metrics CSV, one row per training step. val_eer is blank on steps
/// without a validation pass.
inline void write_metrics_csv(const std::vector<TrainLogRecord>& log,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require_config(out.good(), "write_metrics_csv: cannot open " + path);
  out << "step,loss,mean_compactness,mean_weight,rejected_fraction,"
         "temperature,lr,val_eer\n";
  for (const TrainLogRecord& r : log) {
    out << r.step << ',' << format_g17(r.loss) << ','
        << format_g17(r.mean_compactness) << ',' << format_g17(r.mean_weight)
        << ',' << format_g17(r.rejected_fraction) << ','
        << format_g17(r.temperature) << ',' << format_g17(r.lr) << ',';
    if (r.has_val_eer) out << format_g17(r.val_eer);
    out << '\n';
  }
  require_config(out.good(), "write_metrics_csv: write failed for " + path);
}

namespace detail {

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline TrainResult run_training(
    const ExperimentConfig& config, std::span<const Dialogue> train_split,
    std::span<const Dialogue> val_split, bool finetune_mode,
    const std::optional<Checkpoint>& init) {
  const TrainSettings& ts = config.train;
  const EncoderConfig enc_cfg = ts.encoder;

  RejectionConfig rejection = ts.rejection;
  if (finetune_mode) rejection.mode = RejectionMode::kOff;  // labels trusted

  TrainableLayout layout;
  layout.encoder_count = encoder_param_count(enc_cfg);
  layout.has_scale = ts.loss != "ava";
  layout.has_temperature = rejection.mode == RejectionMode::kSoft &&
                           rejection.temperature_learnable;

  Rng root(ts.seed);
  Rng init_rng = root.split("encoder/init");
  Rng batch_rng = root.split("trainer/batches");
  Rng trial_rng = root.split("eval/trials");

  // Trainable vector: encoder weights, then extras.
  std::vector<double> trainable(layout.total());
  LossScaleParams scale;
  double temperature = rejection.temperature;
  if (init.has_value()) {
    require_config(init->encoder_config.input_dim == enc_cfg.input_dim &&
                       init->encoder_config.num_layers == enc_cfg.num_layers &&
                       init->encoder_config.hidden_dim == enc_cfg.hidden_dim &&
                       init->encoder_config.embed_dim == enc_cfg.embed_dim,
                   "init checkpoint encoder shape does not match config");
    std::copy(init->encoder_flat.begin(), init->encoder_flat.end(),
              trainable.begin());
  } else {
    const EncoderParams fresh = init_encoder_params(enc_cfg, init_rng);
    const std::vector<double> flat = encoder_params_to_flat(fresh);
    std::copy(flat.begin(), flat.end(), trainable.begin());
  }
  if (layout.has_scale) {
    trainable[layout.scale_index()] = scale.scale;
    trainable[layout.bias_index()] = scale.bias;
  }
  if (layout.has_temperature)
    trainable[layout.temperature_index()] = temperature;

  AdamState adam(ts.optimizer, trainable.size());

  auto current_params = [&]() {
    return encoder_params_from_flat(
        enc_cfg, std::span<const double>(trainable.data(),
                                         layout.encoder_count));
  };
  auto current_scale = [&]() {
    LossScaleParams s;
    if (layout.has_scale) {
      s.scale = trainable[layout.scale_index()];
      s.bias = trainable[layout.bias_index()];
    }
    return s;
  };
  auto current_temperature = [&]() {
    return layout.has_temperature ? trainable[layout.temperature_index()]
                                  : rejection.temperature;
  };
  auto snapshot = [&]() {
    Checkpoint cp;
    cp.encoder_config = enc_cfg;
    cp.encoder_flat.assign(trainable.begin(),
                           trainable.begin() + layout.encoder_count);
    cp.extras.has_scale = layout.has_scale;
    cp.extras.scale = current_scale();
    cp.extras.has_temperature = layout.has_temperature;
    cp.extras.temperature = current_temperature();
    cp.adam = adam;
    return cp;
  };

  ValidationContext val;
  val.dialogues = val_split;
  val.threads = ts.threads;
  {
    std::vector<int> labels;
    for (const Dialogue& d : val_split)
      labels.insert(labels.end(), d.true_speaker_ids.begin(),
                    d.true_speaker_ids.end());
    val.trials = build_trial_pairs(labels, trial_rng,
                                   config.eval.targets_per_speaker,
                                   config.eval.nontarget_ratio);
  }

  SpeakerPool pool;
  if (finetune_mode) {
    pool = SpeakerPool::build(train_split, ts.num_labeled_speakers,
                              ts.batch_utterances);
    require_config(static_cast<int>(pool.speaker_ids.size()) >= 2,
                   "finetune: need at least two labeled speakers with enough "
                   "utterances");
    require_config(
        static_cast<int>(pool.speaker_ids.size()) >= ts.batch_dialogues,
        "finetune: fewer eligible speakers than batch_dialogues");
  }
  const EpisodicBatchSpec batch_spec{ts.batch_dialogues, ts.batch_utterances};
  if (!finetune_mode) {
    batch_spec.validate();
    require_config(static_cast<int>(train_split.size()) >= ts.batch_dialogues,
                   "pretrain: training split has fewer dialogues than "
                   "batch_dialogues");
  }

  TrainResult result;
  result.initial_val_eer = val.eer(current_params());
  result.best_val_eer = result.initial_val_eer;
  result.best_step = 0;
  result.best = snapshot();

  const int rows = ts.batch_dialogues * ts.batch_utterances;
  std::vector<EncodeCache> caches(rows);
  std::vector<std::vector<double>> utter_grads(
      rows, std::vector<double>(layout.encoder_count, 0.0));
  std::vector<double> grad(layout.total(), 0.0);

  for (std::int64_t step = 1; step <= ts.iterations; ++step) {
    const EncoderParams params = current_params();
    const LossScaleParams step_scale = current_scale();
    RejectionConfig step_rejection = rejection;
    step_rejection.temperature = current_temperature();

    EpisodicBatch batch =
        finetune_mode ? pool.sample(batch_spec, batch_rng)
                      : sample_batch(train_split, batch_spec, batch_rng);

    TrainLogRecord record;
    record.step = step;
    record.lr = effective_lr(adam);
    record.temperature = step_rejection.temperature;

    try {
      // Fan out per-utterance encoding, join before the loss.
      EmbeddingBatch eb;
      eb.n_dialogues = ts.batch_dialogues;
      eb.utter_per_dialogue = ts.batch_utterances;
      eb.embeddings = Matrix(rows, enc_cfg.embed_dim);
      parallel_for(rows, ts.threads, [&](int i) {
        const std::vector<double> e =
            encode_with_cache(params, batch.utterances[i], caches[i]);
        std::copy(e.begin(), e.end(), eb.embeddings.row(i).begin());
      });

      StepLoss sl = compute_step_loss(eb, ts.loss, step_rejection, step_scale);
      record.mean_compactness = mean(sl.report.compactness);
      record.mean_weight = mean(sl.weights);
      record.rejected_fraction =
          static_cast<double>(sl.report.rejected_count) / ts.batch_dialogues;
      if (ts.rejection_diagnostics)
        result.rejection_log.push_back(rejection_report_json(
            sl.report, step, step_rejection.temperature));

      if (sl.skipped) {
        record.loss = 0.0;
        result.log.push_back(record);
        continue;  // fewer than two accepted dialogues: no update
      }

      const WeightedBatchLoss wb = weighted_batch_loss(sl.per_utt, sl.weights);
      record.loss = wb.loss;

      // Backward through the encoder, one buffer per utterance so the
      // reduction order is fixed regardless of threading.
      parallel_for(rows, ts.threads, [&](int i) {
        std::fill(utter_grads[i].begin(), utter_grads[i].end(), 0.0);
        encoder_backward_accumulate(params, batch.utterances[i], caches[i],
                                    wb.grad.row(i), utter_grads[i]);
      });
      std::fill(grad.begin(), grad.end(), 0.0);
      for (int i = 0; i < rows; ++i)
        for (long e = 0; e < layout.encoder_count; ++e)
          grad[e] += utter_grads[i][e];
      if (layout.has_scale) {
        grad[layout.scale_index()] = wb.d_scale;
        grad[layout.bias_index()] = wb.d_bias;
      }
      if (layout.has_temperature)
        grad[layout.temperature_index()] = sl.report.temperature_grad;

      clip_global_norm(grad, ts.grad_clip_norm);
      adam_step(adam, trainable, grad);
      if (layout.has_scale)
        trainable[layout.scale_index()] =
            std::max(trainable[layout.scale_index()], kScaleFloor);
      if (layout.has_temperature)
        trainable[layout.temperature_index()] = std::max(
            trainable[layout.temperature_index()], kTemperatureFloor);

      if (step % ts.eval_every == 0 || step == ts.iterations) {
        record.has_val_eer = true;
        record.val_eer = val.eer(current_params());
        require_finite_value(record.val_eer, "validation EER");
        if (record.val_eer < result.best_val_eer) {
          result.best_val_eer = record.val_eer;
          result.best_step = step;
          result.best = snapshot();
        }
      }
    } catch (const NumericError& e) {
      record.loss = std::nan("");
      result.log.push_back(record);
      result.aborted = true;
      result.abort_message =
          "aborted at step " + std::to_string(step) + ": " + e.what();
      break;
    }
    result.log.push_back(record);
  }

  result.last = snapshot();
  return result;
}

}  // namespace detail

/// Splits a corpus into train/validation by dialogue order: the last
/// round(val_fraction * size) dialogues (at least one) are held out.
inline std::pair<std::span<const Dialogue>, std::span<const Dialogue>>
split_corpus(const Corpus& corpus, double val_fraction) {
  const long size = static_cast<long>(corpus.dialogues.size());
  long val_count = std::lround(val_fraction * static_cast<double>(size));
  val_count = std::max(1L, std::min(val_count, size - 1));
  std::span<const Dialogue> all(corpus.dialogues);
  return {all.first(size - val_count), all.last(val_count)};
}

/// Self-supervised pretraining: dialogues act as classes, speaker labels
/// are never read by the sampler or the loss.
inline TrainResult pretrain(const Corpus& corpus,
                            const ExperimentConfig& config) {
  config.validate();
  require_config(config.train.mode == "pretrain",
                 "pretrain: config mode is not 'pretrain'");
  require_config(
      corpus.spec.utterances_per_dialogue >= config.train.batch_utterances,
      "pretrain: dialogues have fewer utterances than batch_utterances");
  auto [train_split, val_split] =
      split_corpus(corpus, config.eval.val_fraction);
  return detail::run_training(config, train_split, val_split,
                              /*finetune_mode=*/false, std::nullopt);
}

/// Supervised fine-tuning: speakers act as classes, rejection is disabled.
/// Pass a checkpoint to start from pretrained weights, nothing to train
/// from scratch. With zero iterations the initial state is returned as is.
inline TrainResult finetune(const Corpus& corpus,
                            const ExperimentConfig& config,
                            const std::optional<Checkpoint>& init) {
  config.validate();
  require_config(config.train.mode == "finetune",
                 "finetune: config mode is not 'finetune'");
  auto [train_split, val_split] =
      split_corpus(corpus, config.eval.val_fraction);
  return detail::run_training(config, train_split, val_split,
                              /*finetune_mode=*/true, init);
}

}  // namespace dialemb
