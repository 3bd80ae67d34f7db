// dialemb/corpus.hpp
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
#include <span>
#include <string>
#include <vector>

#include "dialemb/encoder.hpp"
#include "dialemb/error.hpp"
#include "dialemb/matrix.hpp"
#include "dialemb/rng.hpp"

#include "json.hpp"

namespace dialemb {

// Synthetic stand-in for real dialogue traffic. Each speaker is a unit
// "voice" vector; an utterance is that voice (plus per-speaker scatter)
// pushed through a fixed random linear lift into feature space, offset by
// a per-utterance channel vector, with i.i.d. noise per frame. A
// contaminated dialogue has exactly one non-first utterance slot re-drawn
// from a different speaker, which breaks the "same dialogue => same
// speaker" assumption the training objective leans on.
struct CorpusSpec {
  int num_speakers = 64;
  int num_dialogues = 2000;
  int utterances_per_dialogue = 3;
  int frames = 20;
  int feature_dim = 16;
  int voice_dim = 8;
  double contamination_rate = 0.3;  // p
  double channel_noise_std = 0.3;
  double intra_speaker_std = 0.05;
  double frame_noise_std = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    require_config(contamination_rate >= 0.0 && contamination_rate <= 1.0,
                   "corpus: contamination_rate must lie in [0, 1]");
    require_config(num_speakers >= 1, "corpus: need at least one speaker");
    require_config(!(num_speakers < 2 && contamination_rate > 0.0),
                   "corpus: contamination requires at least two speakers");
    require_config(num_dialogues >= 1, "corpus: need at least one dialogue");
    require_config(utterances_per_dialogue >= 2,
                   "corpus: need at least two utterances per dialogue");
    require_config(frames >= 1 && feature_dim >= 1 && voice_dim >= 1,
                   "corpus: frames and dimensions must be >= 1");
    require_config(channel_noise_std >= 0.0 && intra_speaker_std >= 0.0 &&
                       frame_noise_std >= 0.0,
                   "corpus: noise levels must be >= 0");
  }
};

struct SpeakerModel {
  int speaker_id = 0;
  std::vector<double> voice;  // unit vector in R^voice_dim
  double intra_speaker_std = 0.0;
};

struct Dialogue {
  int dialogue_id = 0;
  std::vector<UtteranceFeatures> utterances;
  std::vector<int> true_speaker_ids;  // hidden from pretraining
  bool is_contaminated = false;
};

struct Corpus {
  CorpusSpec spec;
  std::vector<Dialogue> dialogues;
  // Populated by generate_corpus, not persisted: the generating voice
  // models and the voice->feature lift, kept for oracle-style diagnostics.
  std::vector<SpeakerModel> speakers;
  Matrix lift;  // feature_dim x voice_dim
};

inline Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.spec = spec;

  Rng root(spec.seed);
  Rng speaker_rng = root.split("corpus/speakers");
  Rng lift_rng = root.split("corpus/lift");
  Rng dialogue_rng = root.split("corpus/dialogues");

  corpus.speakers.resize(spec.num_speakers);
  for (int s = 0; s < spec.num_speakers; ++s) {
    SpeakerModel& sp = corpus.speakers[s];
    sp.speaker_id = s;
    sp.intra_speaker_std = spec.intra_speaker_std;
    sp.voice.resize(spec.voice_dim);
    double norm = 0.0;
    do {
      for (double& v : sp.voice) v = speaker_rng.normal();
      norm = l2_norm(sp.voice);
    } while (norm < 1e-9);
    for (double& v : sp.voice) v /= norm;
  }

  corpus.lift = Matrix(spec.feature_dim, spec.voice_dim);
  const double lift_scale = 1.0 / std::sqrt(static_cast<double>(spec.voice_dim));
  for (double& v : corpus.lift.data) v = lift_rng.normal() * lift_scale;

  corpus.dialogues.resize(spec.num_dialogues);
  std::vector<double> voice_sample(spec.voice_dim);
  std::vector<double> base(spec.feature_dim);
  std::vector<double> channel(spec.feature_dim);
  for (int d = 0; d < spec.num_dialogues; ++d) {
    Dialogue& dlg = corpus.dialogues[d];
    dlg.dialogue_id = d;
    const int primary = dialogue_rng.uniform_int(spec.num_speakers);
    const bool contaminated = dialogue_rng.uniform() < spec.contamination_rate;
    int intruder_slot = -1, intruder = -1;
    if (contaminated) {
      // Exactly one non-first slot comes from another speaker.
      intruder_slot = 1 + dialogue_rng.uniform_int(spec.utterances_per_dialogue - 1);
      intruder = (primary + 1 + dialogue_rng.uniform_int(spec.num_speakers - 1)) %
                 spec.num_speakers;
    }
    dlg.is_contaminated = contaminated;
    dlg.utterances.resize(spec.utterances_per_dialogue);
    dlg.true_speaker_ids.resize(spec.utterances_per_dialogue);
    for (int j = 0; j < spec.utterances_per_dialogue; ++j) {
      const int speaker = (j == intruder_slot) ? intruder : primary;
      dlg.true_speaker_ids[j] = speaker;
      const SpeakerModel& sp = corpus.speakers[speaker];
      for (int v = 0; v < spec.voice_dim; ++v)
        voice_sample[v] =
            sp.voice[v] + spec.intra_speaker_std * dialogue_rng.normal();
      detail::matvec(corpus.lift, voice_sample, base, false);
      for (int f = 0; f < spec.feature_dim; ++f)
        channel[f] = spec.channel_noise_std * dialogue_rng.normal();
      UtteranceFeatures& u = dlg.utterances[j];
      u.frames = Matrix(spec.frames, spec.feature_dim);
      for (int f = 0; f < spec.frames; ++f)
        for (int c = 0; c < spec.feature_dim; ++c)
          u.frames(f, c) = base[c] + channel[c] +
                           spec.frame_noise_std * dialogue_rng.normal();
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Episodic batch sampling (N dialogues x M utterances per step).

struct EpisodicBatchSpec {
  int n_dialogues = 32;   // N
  int m_utterances = 2;   // M

  void validate() const {
    require_config(n_dialogues >= 2, "batch: need N >= 2");
    require_config(m_utterances >= 2, "batch: need M >= 2");
  }
};

// Raw utterances for one step, dialogue-major like EmbeddingBatch rows,
// plus provenance for diagnostics only (training never reads speaker ids).
struct EpisodicBatch {
  EpisodicBatchSpec spec;
  std::vector<UtteranceFeatures> utterances;  // N * M
  std::vector<int> dialogue_ids;              // N
  std::vector<int> slots;                     // N * M
  std::vector<int> speaker_ids;               // N * M
  std::vector<bool> dialogue_contaminated;    // N

  int row(int i, int j) const { return i * spec.m_utterances + j; }
};

inline EpisodicBatch sample_batch(std::span<const Dialogue> dialogues,
                                  const EpisodicBatchSpec& spec, Rng& rng) {
  spec.validate();
  const int pool = static_cast<int>(dialogues.size());
  require_config(pool >= spec.n_dialogues,
                 "sample_batch: corpus has fewer than N dialogues");

  // Partial Fisher-Yates for sampling without replacement.
  std::vector<int> order(pool);
  for (int i = 0; i < pool; ++i) order[i] = i;
  EpisodicBatch batch;
  batch.spec = spec;
  batch.utterances.reserve(static_cast<std::size_t>(spec.n_dialogues) *
                           spec.m_utterances);
  for (int i = 0; i < spec.n_dialogues; ++i) {
    const int pick = i + rng.uniform_int(pool - i);
    std::swap(order[i], order[pick]);
    const Dialogue& dlg = dialogues[order[i]];
    const int upd = static_cast<int>(dlg.utterances.size());
    require_config(upd >= spec.m_utterances,
                   "sample_batch: dialogue " + std::to_string(dlg.dialogue_id) +
                       " has fewer than M utterances");
    batch.dialogue_ids.push_back(dlg.dialogue_id);
    batch.dialogue_contaminated.push_back(dlg.is_contaminated);
    std::vector<int> slot_order(upd);
    for (int s = 0; s < upd; ++s) slot_order[s] = s;
    for (int j = 0; j < spec.m_utterances; ++j) {
      const int spick = j + rng.uniform_int(upd - j);
      std::swap(slot_order[j], slot_order[spick]);
      const int slot = slot_order[j];
      batch.utterances.push_back(dlg.utterances[slot]);
      batch.slots.push_back(slot);
      batch.speaker_ids.push_back(dlg.true_speaker_ids[slot]);
    }
  }
  return batch;
}

inline EpisodicBatch sample_batch(const Corpus& corpus,
                                  const EpisodicBatchSpec& spec, Rng& rng) {
  return sample_batch(std::span<const Dialogue>(corpus.dialogues), spec, rng);
}

// ---------------------------------------------------------------------------
// Corpus file format: JSON lines. The first line is a header carrying the
// generating spec; every following line is one dialogue. Round-trips are
// bit-exact (nlohmann emits shortest exactly-reparsing doubles, and object
// keys serialize in sorted order).

inline nlohmann::json corpus_spec_to_json(const CorpusSpec& s) {
  nlohmann::json j;
  j["num_speakers"] = s.num_speakers;
  j["num_dialogues"] = s.num_dialogues;
  j["utterances_per_dialogue"] = s.utterances_per_dialogue;
  j["frames"] = s.frames;
  j["feature_dim"] = s.feature_dim;
  j["voice_dim"] = s.voice_dim;
  j["contamination_rate"] = s.contamination_rate;
  j["channel_noise_std"] = s.channel_noise_std;
  j["intra_speaker_std"] = s.intra_speaker_std;
  j["frame_noise_std"] = s.frame_noise_std;
  j["seed"] = s.seed;
  return j;
}

inline CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  CorpusSpec s;
  static const std::vector<std::string> known = {
      "num_speakers",       "num_dialogues",    "utterances_per_dialogue",
      "frames",             "feature_dim",      "voice_dim",
      "contamination_rate", "channel_noise_std", "intra_speaker_std",
      "frame_noise_std",    "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : known) ok = ok || (it.key() == k);
    require_config(ok, "corpus spec: unknown field '" + it.key() + "'");
  }
  auto get = [&j](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  get("num_speakers", s.num_speakers);
  get("num_dialogues", s.num_dialogues);
  get("utterances_per_dialogue", s.utterances_per_dialogue);
  get("frames", s.frames);
  get("feature_dim", s.feature_dim);
  get("voice_dim", s.voice_dim);
  get("contamination_rate", s.contamination_rate);
  get("channel_noise_std", s.channel_noise_std);
  get("intra_speaker_std", s.intra_speaker_std);
  get("frame_noise_std", s.frame_noise_std);
  get("seed", s.seed);
  return s;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require_config(out.good(), "save_corpus: cannot open " + path);
  nlohmann::json header;
  header["type"] = "dialemb_corpus";
  header["version"] = 1;
  header["spec"] = corpus_spec_to_json(corpus.spec);
  out << header.dump() << "\n";
  for (const Dialogue& d : corpus.dialogues) {
    nlohmann::json j;
    j["dialogue_id"] = d.dialogue_id;
    j["speakers"] = d.true_speaker_ids;
    j["contaminated"] = d.is_contaminated;
    nlohmann::json utts = nlohmann::json::array();
    for (const UtteranceFeatures& u : d.utterances) {
      nlohmann::json frames = nlohmann::json::array();
      for (int f = 0; f < u.frames.rows; ++f) {
        auto row = u.frames.row(f);
        frames.push_back(std::vector<double>(row.begin(), row.end()));
      }
      utts.push_back(std::move(frames));
    }
    j["utterances"] = std::move(utts);
    out << j.dump() << "\n";
  }
  require_config(out.good(), "save_corpus: write failed for " + path);
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require_config(in.good(), "load_corpus: cannot open " + path);
  std::string line;
  require_config(static_cast<bool>(std::getline(in, line)),
                 "load_corpus: empty file " + path);
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  require_config(!header.is_discarded() && header.value("type", "") ==
                     "dialemb_corpus",
                 "load_corpus: not a corpus file: " + path);
  require_config(header.value("version", 0) == 1,
                 "load_corpus: unsupported corpus version");
  Corpus corpus;
  corpus.spec = corpus_spec_from_json(header.at("spec"));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Dialogue d;
    d.dialogue_id = j.at("dialogue_id").get<int>();
    d.true_speaker_ids = j.at("speakers").get<std::vector<int>>();
    d.is_contaminated = j.at("contaminated").get<bool>();
    for (const auto& frames : j.at("utterances")) {
      UtteranceFeatures u;
      const int f_count = static_cast<int>(frames.size());
      require_config(f_count >= 1, "load_corpus: utterance without frames");
      const int dim = static_cast<int>(frames.at(0).size());
      u.frames = Matrix(f_count, dim);
      for (int f = 0; f < f_count; ++f) {
        const auto& row = frames.at(f);
        require_config(static_cast<int>(row.size()) == dim,
                       "load_corpus: ragged frame row");
        for (int c = 0; c < dim; ++c) u.frames(f, c) = row.at(c).get<double>();
      }
      d.utterances.push_back(std::move(u));
    }
    require_config(d.utterances.size() >= 2 &&
                       d.utterances.size() == d.true_speaker_ids.size(),
                   "load_corpus: malformed dialogue record");
    corpus.dialogues.push_back(std::move(d));
  }
  return corpus;
}

}  // namespace dialemb
