// dialemb/eval.hpp
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
#include <cstdint>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "dialemb/error.hpp"
#include "dialemb/losses.hpp"
#include "dialemb/matrix.hpp"
#include "dialemb/rng.hpp"

namespace dialemb {

// One verification trial: a pair of embedding rows scored by cosine.
struct Trial {
  int a = 0;
  int b = 0;
  bool same_speaker = false;
  double score = 0.0;
};

struct TrialSet {
  std::vector<Trial> trials;
  int num_targets = 0;
  int num_nontargets = 0;
};

struct EerResult {
  double eer = 0.0;
  double threshold_at_eer = 0.0;
  int num_target_trials = 0;
  int num_nontarget_trials = 0;
};

/// Samples same-speaker and different-speaker pairs without duplicate
/// unordered pairs, leaving scores unset. Up to targets_per_speaker target
/// pairs per speaker; nontargets number round(nontarget_ratio * targets),
/// capped by what is available. Deterministic given the rng.
inline TrialSet build_trial_pairs(const std::vector<int>& speaker_ids,
                                  Rng& rng, int targets_per_speaker,
                                  double nontarget_ratio) {
  require_config(targets_per_speaker >= 1,
                 "build_trials: targets_per_speaker must be >= 1");
  require_config(nontarget_ratio > 0.0,
                 "build_trials: nontarget_ratio must be > 0");
  const int rows = static_cast<int>(speaker_ids.size());

  std::map<int, std::vector<int>> by_speaker;
  for (int r = 0; r < rows; ++r) by_speaker[speaker_ids[r]].push_back(r);
  require_config(by_speaker.size() >= 2, "build_trials: need >= 2 speakers");
  bool any_pair = false;
  for (const auto& [spk, members] : by_speaker)
    any_pair = any_pair || members.size() >= 2;
  require_config(any_pair, "build_trials: no speaker has >= 2 utterances");

  TrialSet set;
  auto add_pair = [&set](int a, int b, bool same) {
    Trial t;
    t.a = a;
    t.b = b;
    t.same_speaker = same;
    set.trials.push_back(t);
  };

  // Targets: enumerate each speaker's pairs; subsample when over budget.
  for (const auto& [spk, members] : by_speaker) {
    const int n = static_cast<int>(members.size());
    if (n < 2) continue;
    std::vector<std::pair<int, int>> pairs;
    for (int x = 0; x < n; ++x)
      for (int y = x + 1; y < n; ++y)
        pairs.emplace_back(members[x], members[y]);
    const int want = std::min<int>(targets_per_speaker,
                                   static_cast<int>(pairs.size()));
    for (int i = 0; i < want; ++i) {
      const int pick = i + rng.uniform_int(static_cast<int>(pairs.size()) - i);
      std::swap(pairs[i], pairs[pick]);
      add_pair(pairs[i].first, pairs[i].second, true);
      ++set.num_targets;
    }
  }

  // Nontargets: rejection-sample distinct cross-speaker pairs.
  const long want_nontargets =
      std::lround(nontarget_ratio * set.num_targets);
  require_config(want_nontargets >= 1,
                 "build_trials: nontarget_ratio yields zero nontarget trials");
  std::set<std::pair<int, int>> seen;
  long attempts = 0;
  const long max_attempts = 200 + 50 * want_nontargets;
  while (set.num_nontargets < want_nontargets && attempts < max_attempts) {
    ++attempts;
    const int a = rng.uniform_int(rows);
    const int b = rng.uniform_int(rows);
    if (a == b || speaker_ids[a] == speaker_ids[b]) continue;
    const auto key = std::minmax(a, b);
    if (!seen.insert(key).second) continue;
    add_pair(key.first, key.second, false);
    ++set.num_nontargets;
  }
  require_config(set.num_nontargets >= 1,
                 "build_trials: could not sample any nontarget pair");
  return set;
}

/// (Re)computes each trial's cosine score from the given embeddings.
inline void score_trials(TrialSet& set, const Matrix& embeddings) {
  for (Trial& t : set.trials) {
    require_shape(t.a < embeddings.rows && t.b < embeddings.rows,
                  "score_trials: trial index out of range");
    t.score = cosine(embeddings.row(t.a), embeddings.row(t.b));
  }
}

inline TrialSet build_trials(const Matrix& embeddings,
                             const std::vector<int>& speaker_ids, Rng& rng,
                             int targets_per_speaker,
                             double nontarget_ratio) {
  require_shape(static_cast<int>(speaker_ids.size()) == embeddings.rows,
                "build_trials: label count != embedding rows");
  TrialSet set =
      build_trial_pairs(speaker_ids, rng, targets_per_speaker, nontarget_ratio);
  score_trials(set, embeddings);
  return set;
}

// Equal error rate. Operating points are swept over the distinct trial
// scores (plus an accept-nothing sentinel) with the convention that a
// score >= threshold is accepted:
//   FAR(th) = fraction of nontargets with score >= th
//   FRR(th) = fraction of targets with score < th
// FAR - FRR decreases monotonically from 1 to -1 as the threshold rises;
// the EER is read off where it crosses zero, linearly interpolated between
// the two adjacent operating points that bracket the crossing.
inline EerResult compute_eer(const TrialSet& set) {
  std::vector<double> targets, nontargets;
  for (const Trial& t : set.trials)
    (t.same_speaker ? targets : nontargets).push_back(t.score);
  require_config(!targets.empty(), "compute_eer: no target trials");
  require_config(!nontargets.empty(), "compute_eer: no nontarget trials");
  std::sort(targets.begin(), targets.end());
  std::sort(nontargets.begin(), nontargets.end());

  std::vector<double> thresholds;
  thresholds.reserve(set.trials.size() + 1);
  for (double s : targets) thresholds.push_back(s);
  for (double s : nontargets) thresholds.push_back(s);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());
  thresholds.push_back(thresholds.back() + 1.0);  // accept nothing

  const double nt = static_cast<double>(targets.size());
  const double nn = static_cast<double>(nontargets.size());
  auto far_at = [&](double th) {
    // nontargets with score >= th
    const auto it =
        std::lower_bound(nontargets.begin(), nontargets.end(), th);
    return static_cast<double>(nontargets.end() - it) / nn;
  };
  auto frr_at = [&](double th) {
    // targets with score < th
    const auto it = std::lower_bound(targets.begin(), targets.end(), th);
    return static_cast<double>(it - targets.begin()) / nt;
  };

  EerResult result;
  result.num_target_trials = static_cast<int>(targets.size());
  result.num_nontarget_trials = static_cast<int>(nontargets.size());

  double prev_th = thresholds.front();
  double prev_far = far_at(prev_th), prev_frr = frr_at(prev_th);
  double prev_diff = prev_far - prev_frr;
  if (prev_diff <= 0.0) {
    // Degenerate: already at or past the crossing at the lowest score.
    result.eer = prev_diff == 0.0 ? prev_far : 0.5 * (prev_far + prev_frr);
    result.threshold_at_eer = prev_th;
    return result;
  }
  for (std::size_t k = 1; k < thresholds.size(); ++k) {
    const double th = thresholds[k];
    const double far = far_at(th), frr = frr_at(th);
    const double diff = far - frr;
    if (diff <= 0.0) {
      if (diff == 0.0) {
        result.eer = far;
        result.threshold_at_eer = th;
      } else {
        const double alpha = prev_diff / (prev_diff - diff);
        result.eer = prev_far + alpha * (far - prev_far);
        result.threshold_at_eer = prev_th + alpha * (th - prev_th);
      }
      return result;
    }
    prev_th = th;
    prev_far = far;
    prev_frr = frr;
    prev_diff = diff;
  }
  // Unreachable: the sentinel gives FAR 0, FRR 1.
  result.eer = 0.0;
  result.threshold_at_eer = prev_th;
  return result;
}

/// Probability that a uniformly random clean dialogue receives a strictly
/// higher weight than a uniformly random contaminated one, ties counting
/// one half (the rank-statistic AUC). 1.0 means the weights separate the
/// classes perfectly.
inline double rejection_auc(const std::vector<double>& weights,
                            const std::vector<bool>& contaminated) {
  require_shape(weights.size() == contaminated.size(),
                "rejection_auc: size mismatch");
  std::vector<double> clean, contam;
  for (std::size_t i = 0; i < weights.size(); ++i)
    (contaminated[i] ? contam : clean).push_back(weights[i]);
  require_config(!clean.empty() && !contam.empty(),
                 "rejection_auc: need both clean and contaminated dialogues");
  double wins = 0.0;
  for (double c : clean)
    for (double x : contam) {
      if (c > x) wins += 1.0;
      else if (c == x) wins += 0.5;
    }
  return wins / (static_cast<double>(clean.size()) *
                 static_cast<double>(contam.size()));
}

}  // namespace dialemb
