// dialemb/rejection.hpp
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

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dialemb/error.hpp"
#include "dialemb/losses.hpp"
#include "dialemb/matrix.hpp"

#include "json.hpp"

namespace dialemb {

// A dialogue whose sampled utterances do not resemble each other is
// probably not a single speaker. Compactness measures that resemblance;
// the weights here turn it into a per-dialogue loss multiplier (soft mode)
// or a drop decision (hard mode). Gradients never flow back through the
// compactness values: they act purely as scaling factors.
enum class RejectionMode { kOff, kSoft, kHard };

struct RejectionConfig {
  RejectionMode mode = RejectionMode::kOff;
  double threshold = 0.5;     // t, in [-1, 1]
  double temperature = 10.0;  // T > 0, soft mode; learnable if flagged
  bool temperature_learnable = false;

  void validate() const {
    require_config(threshold >= -1.0 && threshold <= 1.0,
                   "rejection: threshold must lie in [-1, 1]");
    require_config(temperature > 0.0, "rejection: temperature must be > 0");
  }
};

struct RejectionReport {
  std::vector<double> compactness;  // C_i per dialogue
  std::vector<double> weights;      // w_i per dialogue
  int rejected_count = 0;           // hard mode
  double temperature_grad = 0.0;    // soft mode with learnable temperature
};

inline RejectionMode rejection_mode_from_string(const std::string& s) {
  if (s == "off") return RejectionMode::kOff;
  if (s == "soft") return RejectionMode::kSoft;
  if (s == "hard") return RejectionMode::kHard;
  throw ConfigError("unknown rejection mode: " + s);
}

inline std::string to_string(RejectionMode m) {
  switch (m) {
    case RejectionMode::kOff: return "off";
    case RejectionMode::kSoft: return "soft";
    case RejectionMode::kHard: return "hard";
  }
  return "off";
}

/// Mean pairwise cosine similarity within each dialogue:
///   C_i = 1/(M(M-1)) * sum_{j} sum_{k != j} s(x_ij, x_ik)
/// For M = 2 this is just the similarity of the two utterances.
inline std::vector<double> compactness(const EmbeddingBatch& batch) {
  require_config(batch.utter_per_dialogue >= 2, "compactness: need M >= 2");
  const int n = batch.n_dialogues;
  const int m = batch.utter_per_dialogue;
  std::vector<double> c(n, 0.0);
  const double inv = 1.0 / (static_cast<double>(m) * (m - 1));
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k) {
        if (k == j) continue;
        acc += cosine(batch.embeddings.row(batch.row(i, j)),
                      batch.embeddings.row(batch.row(i, k)));
      }
    c[i] = acc * inv;
  }
  return c;
}

namespace detail {

inline double stable_sigmoid(double a) {
  if (a >= 0.0) {
    return 1.0 / (1.0 + std::exp(-a));
  }
  const double e = std::exp(a);
  return e / (1.0 + e);
}

}  // namespace detail

/// w_i = sigmoid(T * (C_i - t)). The compactness input is treated as a
/// constant; no gradient is defined with respect to it.
inline std::vector<double> soft_weights(const std::vector<double>& c,
                                        const RejectionConfig& cfg) {
  require_config(cfg.mode == RejectionMode::kSoft,
                 "soft_weights: rejection mode is not soft");
  cfg.validate();
  std::vector<double> w(c.size());
  for (std::size_t i = 0; i < c.size(); ++i)
    w[i] = detail::stable_sigmoid(cfg.temperature * (c[i] - cfg.threshold));
  return w;
}

/// dL/dT for L = sum_{i,j} w_i(T) * loss(i, j), with compactness and the
/// per-utterance losses held fixed:
///   dL/dT = sum_{i,j} sigmoid'(T(C_i - t)) * (C_i - t) * loss(i, j)
inline double temperature_gradient(const std::vector<double>& c,
                                   const RejectionConfig& cfg,
                                   const Matrix& loss_values) {
  require_config(cfg.mode == RejectionMode::kSoft,
                 "temperature_gradient: rejection mode is not soft");
  require_shape(static_cast<int>(c.size()) == loss_values.rows,
                "temperature_gradient: compactness count != loss rows");
  double g = 0.0;
  for (int i = 0; i < loss_values.rows; ++i) {
    const double a = cfg.temperature * (c[i] - cfg.threshold);
    const double s = detail::stable_sigmoid(a);
    const double dsig = s * (1.0 - s);
    double row_sum = 0.0;
    for (int j = 0; j < loss_values.cols; ++j) row_sum += loss_values(i, j);
    g += dsig * (c[i] - cfg.threshold) * row_sum;
  }
  return g;
}

struct HardWeights {
  std::vector<double> weights;  // 0 or 1
  int rejected_count = 0;
};

/// w_i = 1 if C_i > t else 0. Ties at the threshold reject.
inline HardWeights hard_weights(const std::vector<double>& c,
                                const RejectionConfig& cfg) {
  require_config(cfg.mode == RejectionMode::kHard,
                 "hard_weights: rejection mode is not hard");
  cfg.validate();
  HardWeights out;
  out.weights.resize(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const bool accept = c[i] > cfg.threshold;
    out.weights[i] = accept ? 1.0 : 0.0;
    if (!accept) ++out.rejected_count;
  }
  return out;
}

/// All-versus-all loss with rejected dialogues struck from the batch:
/// their loss rows are zero and they appear in no accepted query's
/// denominator. Returns nullopt when fewer than two dialogues remain,
/// which callers treat as "skip this batch".
inline std::optional<PerUtteranceLoss> masked_ava_loss(
    const EmbeddingBatch& batch, const std::vector<bool>& accept_mask) {
  require_shape(static_cast<int>(accept_mask.size()) == batch.n_dialogues,
                "masked_ava_loss: mask size != N");
  int n_accepted = 0;
  for (bool a : accept_mask) n_accepted += a ? 1 : 0;
  if (n_accepted < 2) return std::nullopt;
  return ava_loss_masked(batch, accept_mask);
}

struct WeightedBatchLoss {
  double loss = 0.0;
  Matrix grad;  // d loss / d embeddings, weights treated as constants
  double d_scale = 0.0;  // weighted scale/bias gradients, when the loss has them
  double d_bias = 0.0;
};

/// L = sum_i w_i * sum_j loss(i, j), gradient = sum_i w_i * dialogue_grad_i.
inline WeightedBatchLoss weighted_batch_loss(const PerUtteranceLoss& per_utt,
                                             const std::vector<double>& w) {
  require_shape(static_cast<int>(w.size()) == per_utt.values.rows,
                "weighted_batch_loss: weight count != N");
  WeightedBatchLoss out;
  double sum = 0.0, comp = 0.0;
  for (int i = 0; i < per_utt.values.rows; ++i) {
    for (int j = 0; j < per_utt.values.cols; ++j) {
      const double term = w[i] * per_utt.values(i, j);
      const double y = term - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
  }
  out.loss = sum;
  out.grad = Matrix(per_utt.grad.rows, per_utt.grad.cols);
  for (int i = 0; i < per_utt.values.rows; ++i) {
    if (w[i] == 0.0) continue;
    const Matrix& dg = per_utt.dialogue_grads[i];
    for (std::size_t e = 0; e < out.grad.data.size(); ++e)
      out.grad.data[e] += w[i] * dg.data[e];
    if (!per_utt.dialogue_d_scale.empty()) {
      out.d_scale += w[i] * per_utt.dialogue_d_scale[i];
      out.d_bias += w[i] * per_utt.dialogue_d_bias[i];
    }
  }
  require_finite_value(out.loss, "weighted batch loss");
  require_all_finite(out.grad, "weighted batch loss gradient");
  return out;
}

/// One diagnostics line per training step (JSON object, single line).
inline std::string rejection_report_json(const RejectionReport& report,
                                         std::int64_t step,
                                         double temperature) {
  nlohmann::json j;
  j["step"] = step;
  j["compactness"] = report.compactness;
  j["weights"] = report.weights;
  j["rejected_count"] = report.rejected_count;
  j["T"] = temperature;
  return j.dump();
}

}  // namespace dialemb
