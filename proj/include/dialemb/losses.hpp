// dialemb/losses.hpp
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
#include <string>
#include <vector>

#include "dialemb/error.hpp"
#include "dialemb/matrix.hpp"

namespace dialemb {

// Episodic batch of embeddings: N dialogues x M utterances, rows ordered
// dialogue-major, row(i, j) = i * M + j.
struct EmbeddingBatch {
  int n_dialogues = 0;        // N
  int utter_per_dialogue = 0; // M
  Matrix embeddings;          // (N * M) x D

  int row(int i, int j) const { return i * utter_per_dialogue + j; }
  int dim() const { return embeddings.cols; }

  void validate() const {
    require_config(n_dialogues >= 2, "embedding batch: need N >= 2 dialogues");
    require_config(utter_per_dialogue >= 2,
                   "embedding batch: need M >= 2 utterances per dialogue");
    require_shape(embeddings.rows == n_dialogues * utter_per_dialogue,
                  "embedding batch: row count != N * M");
    require_all_finite(embeddings, "embedding batch");
    for (int r = 0; r < embeddings.rows; ++r)
      require_config(l2_norm(embeddings.row(r)) > 0.0,
                     "embedding batch: zero-norm embedding in row " +
                         std::to_string(r));
  }
};

// Learnable similarity scale for the centroid-softmax losses:
// logit = scale * cos + bias. The scale is clamped from below so the
// softmax cannot collapse by driving it negative.
struct LossScaleParams {
  double scale = 10.0;
  double bias = -5.0;
};

inline constexpr double kScaleFloor = 1e-6;

// Per-utterance losses for one batch plus exact gradients.
//   values(i, j)        loss of utterance j in dialogue i
//   dialogue_grads[i]   d(sum_j values(i, j)) / d(embeddings), (N*M) x D
//   grad                sum over i of dialogue_grads[i]
// Keeping per-dialogue gradients lets a caller reweight dialogues after
// the fact without recomputing the backward pass.
struct PerUtteranceLoss {
  Matrix values;
  Matrix grad;
  std::vector<Matrix> dialogue_grads;
  double d_scale = 0.0;  // centroid-softmax losses only
  double d_bias = 0.0;
  std::vector<double> dialogue_d_scale;  // per-dialogue pieces of d_scale
  std::vector<double> dialogue_d_bias;
  long denominator_terms = 0;  // per query; M(N-1)+1 for the all-versus-all loss

  double total() const {
    // Kahan summation keeps the batch loss independent of row order at
    // tight tolerance.
    double sum = 0.0, comp = 0.0;
    for (double v : values.data) {
      const double y = v - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    return sum;
  }
};

inline double cosine(std::span<const double> x, std::span<const double> y,
                     double epsilon = kNormEpsilon) {
  const double nx = std::max(l2_norm(x), epsilon);
  const double ny = std::max(l2_norm(y), epsilon);
  return dot(x, y) / (nx * ny);
}

/// Mean of dialogue i's embeddings with slot j left out.
inline std::vector<double> positive_centroid(const EmbeddingBatch& batch,
                                             int i, int j) {
  const int m = batch.utter_per_dialogue;
  require_config(m >= 2, "positive_centroid: need M >= 2");
  std::vector<double> c(batch.dim(), 0.0);
  for (int k = 0; k < m; ++k) {
    if (k == j) continue;
    axpy(1.0, batch.embeddings.row(batch.row(i, k)), c);
  }
  const double inv = 1.0 / (m - 1);
  for (double& v : c) v *= inv;
  return c;
}

namespace detail {

// Accumulates coef * d cos(a, b)/d a into ga and coef * d cos(a, b)/d b
// into gb. na, nb are the (epsilon-guarded) norms of a and b.
inline void add_cosine_grad(std::span<const double> a,
                            std::span<const double> b, double na, double nb,
                            double coef, std::span<double> ga,
                            std::span<double> gb) {
  const double inv = 1.0 / (na * nb);
  const double s = dot(a, b) * inv;
  const double ca = s / (na * na);
  const double cb = s / (nb * nb);
  for (std::size_t d = 0; d < a.size(); ++d) {
    ga[d] += coef * (b[d] * inv - ca * a[d]);
    gb[d] += coef * (a[d] * inv - cb * b[d]);
  }
}

inline double guarded_norm(std::span<const double> v) {
  return std::max(l2_norm(v), kNormEpsilon);
}

inline double logsumexp(const std::vector<double>& vals) {
  double mx = vals[0];
  for (double v : vals) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : vals) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace detail

// All-versus-all loss. Each utterance is a query; its positive is the
// leave-one-out centroid of its own dialogue, and every utterance of every
// other dialogue is an individual negative:
//
//   l(i,j) = -log  exp(s(x_ij, c_ij)) /
//                  ( sum_{k != i, all l} exp(s(x_ij, x_kl)) + exp(s(x_ij, c_ij)) )
//
// giving M(N-1)+1 comparison terms per query. No negative centroids are
// formed, so one odd utterance cannot corrupt the geometry of anything
// beyond its own dialogue's positive.
//
// accept_mask, when non-empty, restricts the loss to the marked dialogues:
// unmarked dialogues contribute no loss rows and are struck from every
// denominator, exactly as if they were not in the batch.
inline PerUtteranceLoss ava_loss_masked(const EmbeddingBatch& batch,
                                        const std::vector<bool>& accept_mask) {
  batch.validate();
  const int n = batch.n_dialogues;
  const int m = batch.utter_per_dialogue;
  const int dim = batch.dim();
  const bool masked = !accept_mask.empty();
  require_shape(!masked || static_cast<int>(accept_mask.size()) == n,
                "ava_loss: accept mask size != N");
  int n_accepted = n;
  if (masked) {
    n_accepted = 0;
    for (bool a : accept_mask) n_accepted += a ? 1 : 0;
    require_config(n_accepted >= 2, "ava_loss: fewer than 2 accepted dialogues");
  }
  auto accepted = [&](int i) { return !masked || accept_mask[i]; };

  std::vector<double> row_norm(batch.embeddings.rows);
  for (int r = 0; r < batch.embeddings.rows; ++r)
    row_norm[r] = detail::guarded_norm(batch.embeddings.row(r));

  PerUtteranceLoss out;
  out.values = Matrix(n, m);
  out.grad = Matrix(batch.embeddings.rows, dim);
  out.dialogue_grads.assign(n, Matrix(batch.embeddings.rows, dim));
  const long expected_terms = static_cast<long>(m) * (n_accepted - 1) + 1;

  std::vector<double> terms;
  std::vector<double> centroid(dim);
  for (int i = 0; i < n; ++i) {
    if (!accepted(i)) continue;
    Matrix& dgrad = out.dialogue_grads[i];
    for (int j = 0; j < m; ++j) {
      const int q = batch.row(i, j);
      auto x_q = batch.embeddings.row(q);
      centroid = positive_centroid(batch, i, j);
      const double c_norm = detail::guarded_norm(centroid);

      terms.clear();
      for (int k = 0; k < n; ++k) {
        if (k == i || !accepted(k)) continue;
        for (int l = 0; l < m; ++l) {
          const int rkl = batch.row(k, l);
          terms.push_back(dot(x_q, batch.embeddings.row(rkl)) /
                          (row_norm[q] * row_norm[rkl]));
        }
      }
      const double s_pos = dot(x_q, centroid) / (row_norm[q] * c_norm);
      terms.push_back(s_pos);
      require_config(static_cast<long>(terms.size()) == expected_terms,
                     "ava_loss: internal term count mismatch");

      const double lse = detail::logsumexp(terms);
      out.values(i, j) = -s_pos + lse;

      // Softmax coefficients, mirroring the term order above.
      std::size_t idx = 0;
      std::vector<double> d_centroid(dim, 0.0);
      for (int k = 0; k < n; ++k) {
        if (k == i || !accepted(k)) continue;
        for (int l = 0; l < m; ++l) {
          const int rkl = batch.row(k, l);
          const double p = std::exp(terms[idx++] - lse);
          detail::add_cosine_grad(x_q, batch.embeddings.row(rkl), row_norm[q],
                                  row_norm[rkl], p, dgrad.row(q),
                                  dgrad.row(rkl));
        }
      }
      const double p_pos = std::exp(terms[idx] - lse);
      detail::add_cosine_grad(x_q, centroid, row_norm[q], c_norm, p_pos - 1.0,
                              dgrad.row(q), d_centroid);
      const double spread = 1.0 / (m - 1);
      for (int l = 0; l < m; ++l) {
        if (l == j) continue;
        axpy(spread, d_centroid, dgrad.row(batch.row(i, l)));
      }
    }
  }

  for (int i = 0; i < n; ++i)
    for (std::size_t e = 0; e < out.grad.data.size(); ++e)
      out.grad.data[e] += out.dialogue_grads[i].data[e];
  out.denominator_terms = expected_terms;
  require_all_finite(out.values, "ava_loss values");
  require_all_finite(out.grad, "ava_loss gradient");
  return out;
}

inline PerUtteranceLoss ava_loss(const EmbeddingBatch& batch) {
  return ava_loss_masked(batch, {});
}

namespace detail {

// Shared core of the centroid-softmax losses (GE2E and angular
// prototypical). Every utterance is a query; the logit against dialogue k
// is scale * cos(query, centroid_k) + bias, where the query's own dialogue
// uses the leave-one-out centroid and the others use their full centroid.
// With this centroid convention the two losses coincide; both entry
// points are kept so configurations name the loss they mean.
inline PerUtteranceLoss episodic_softmax_loss(const EmbeddingBatch& batch,
                                              const LossScaleParams& scale) {
  batch.validate();
  const int n = batch.n_dialogues;
  const int m = batch.utter_per_dialogue;
  const int dim = batch.dim();
  const double w = std::max(scale.scale, kScaleFloor);
  const bool clamped = scale.scale < kScaleFloor;

  std::vector<double> row_norm(batch.embeddings.rows);
  for (int r = 0; r < batch.embeddings.rows; ++r)
    row_norm[r] = guarded_norm(batch.embeddings.row(r));

  // Full centroids per dialogue.
  Matrix full(n, dim);
  for (int k = 0; k < n; ++k) {
    for (int l = 0; l < m; ++l)
      axpy(1.0 / m, batch.embeddings.row(batch.row(k, l)), full.row(k));
  }

  PerUtteranceLoss out;
  out.values = Matrix(n, m);
  out.grad = Matrix(batch.embeddings.rows, dim);
  out.dialogue_grads.assign(n, Matrix(batch.embeddings.rows, dim));
  out.dialogue_d_scale.assign(n, 0.0);
  out.dialogue_d_bias.assign(n, 0.0);
  out.denominator_terms = n;  // N - 1 negative pairs + 1 positive pair

  std::vector<double> logits(n), cosines(n);
  std::vector<double> loo(dim), d_centroid(dim);
  for (int i = 0; i < n; ++i) {
    Matrix& dgrad = out.dialogue_grads[i];
    for (int j = 0; j < m; ++j) {
      const int q = batch.row(i, j);
      auto x_q = batch.embeddings.row(q);
      loo = positive_centroid(batch, i, j);
      const double loo_norm = guarded_norm(loo);

      for (int k = 0; k < n; ++k) {
        std::span<const double> ck = (k == i)
                                         ? std::span<const double>(loo)
                                         : full.row(k);
        const double nk = (k == i) ? loo_norm : guarded_norm(full.row(k));
        cosines[k] = dot(x_q, ck) / (row_norm[q] * nk);
        logits[k] = w * cosines[k] + scale.bias;
      }
      const double lse = logsumexp(logits);
      out.values(i, j) = -logits[i] + lse;

      for (int k = 0; k < n; ++k) {
        const double d_logit = std::exp(logits[k] - lse) - (k == i ? 1.0 : 0.0);
        if (!clamped) out.dialogue_d_scale[i] += d_logit * cosines[k];
        out.dialogue_d_bias[i] += d_logit;
        std::span<const double> ck = (k == i)
                                         ? std::span<const double>(loo)
                                         : full.row(k);
        const double nk = (k == i) ? loo_norm : guarded_norm(full.row(k));
        std::fill(d_centroid.begin(), d_centroid.end(), 0.0);
        add_cosine_grad(x_q, ck, row_norm[q], nk, d_logit * w, dgrad.row(q),
                        d_centroid);
        if (k == i) {
          const double spread = 1.0 / (m - 1);
          for (int l = 0; l < m; ++l)
            if (l != j) axpy(spread, d_centroid, dgrad.row(batch.row(i, l)));
        } else {
          const double spread = 1.0 / m;
          for (int l = 0; l < m; ++l)
            axpy(spread, d_centroid, dgrad.row(batch.row(k, l)));
        }
      }
    }
  }

  for (int i = 0; i < n; ++i) {
    for (std::size_t e = 0; e < out.grad.data.size(); ++e)
      out.grad.data[e] += out.dialogue_grads[i].data[e];
    out.d_scale += out.dialogue_d_scale[i];
    out.d_bias += out.dialogue_d_bias[i];
  }
  require_all_finite(out.values, "episodic softmax loss values");
  require_all_finite(out.grad, "episodic softmax loss gradient");
  return out;
}

}  // namespace detail

/// Generalized end-to-end loss, softmax variant, over dialogue centroids.
inline PerUtteranceLoss ge2e_loss(const EmbeddingBatch& batch,
                                  const LossScaleParams& scale) {
  return detail::episodic_softmax_loss(batch, scale);
}

/// Angular prototypical loss over dialogue prototypes; see
/// episodic_softmax_loss for the centroid convention.
inline PerUtteranceLoss aproto_loss(const EmbeddingBatch& batch,
                                    const LossScaleParams& scale) {
  return detail::episodic_softmax_loss(batch, scale);
}

}  // namespace dialemb
