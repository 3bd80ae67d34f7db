// dialemb/encoder.hpp
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
#include <cstddef>
#include <string>
#include <vector>

#include "dialemb/error.hpp"
#include "dialemb/matrix.hpp"
#include "dialemb/rng.hpp"

namespace dialemb {

// One utterance as a sequence of feature frames, frames.rows = F >= 1,
// frames.cols = feature dimension.
struct UtteranceFeatures {
  Matrix frames;

  int num_frames() const { return frames.rows; }
  int dim() const { return frames.cols; }
};

// Gated recurrent encoder: a stack of GRU layers followed by a linear
// projection of the final hidden state. The cell, per time step t:
//
//   z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)          (update gate)
//   r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)          (reset gate)
//   n_t = tanh(Wn x_t + r_t .* (Un h_{t-1}) + bn)    (candidate)
//   h_t = (1 - z_t) .* n_t + z_t .* h_{t-1},   h_0 = 0
//
// embedding = P h_F(top layer) + p_bias. The embedding is not normalized
// here; cosine similarity handles that downstream. Gradients are exact
// reverse-mode, derived by hand and verified against central differences.
struct EncoderConfig {
  int input_dim = 16;
  int num_layers = 1;   // reference model used a much larger recurrent
  int hidden_dim = 32;  // stack (768 units) with a 256-unit projection
  int embed_dim = 16;
};

struct GruLayer {
  Matrix w_update, w_reset, w_cand;  // hidden x input
  Matrix u_update, u_reset, u_cand;  // hidden x hidden
  std::vector<double> b_update, b_reset, b_cand;
};

struct EncoderParams {
  EncoderConfig config;
  std::vector<GruLayer> layers;
  Matrix proj;                    // embed x hidden
  std::vector<double> proj_bias;  // embed
};

inline long encoder_param_count(const EncoderConfig& c) {
  long n = 0;
  for (int l = 0; l < c.num_layers; ++l) {
    const int in = (l == 0) ? c.input_dim : c.hidden_dim;
    n += 3L * c.hidden_dim * in;           // Wz, Wr, Wn
    n += 3L * c.hidden_dim * c.hidden_dim; // Uz, Ur, Un
    n += 3L * c.hidden_dim;                // bz, br, bn
  }
  n += static_cast<long>(c.embed_dim) * c.hidden_dim + c.embed_dim;
  return n;
}

namespace detail {

inline void init_uniform(Rng& rng, double bound, std::vector<double>& out) {
  for (double& v : out) v = rng.uniform(-bound, bound);
}

inline void init_uniform(Rng& rng, double bound, Matrix& out) {
  init_uniform(rng, bound, out.data);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per tensor, drawn in
/// flattening order so a seed pins the parameters exactly.
inline EncoderParams init_encoder_params(const EncoderConfig& config,
                                         Rng& rng) {
  require_config(config.input_dim >= 1 && config.num_layers >= 1 &&
                     config.hidden_dim >= 1 && config.embed_dim >= 1,
                 "encoder config: all dimensions must be >= 1");
  EncoderParams p;
  p.config = config;
  p.layers.resize(config.num_layers);
  for (int l = 0; l < config.num_layers; ++l) {
    const int in = (l == 0) ? config.input_dim : config.hidden_dim;
    GruLayer& layer = p.layers[l];
    const double wb = 1.0 / std::sqrt(static_cast<double>(in));
    const double ub = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
    layer.w_update = Matrix(config.hidden_dim, in);
    layer.w_reset = Matrix(config.hidden_dim, in);
    layer.w_cand = Matrix(config.hidden_dim, in);
    detail::init_uniform(rng, wb, layer.w_update);
    detail::init_uniform(rng, wb, layer.w_reset);
    detail::init_uniform(rng, wb, layer.w_cand);
    layer.u_update = Matrix(config.hidden_dim, config.hidden_dim);
    layer.u_reset = Matrix(config.hidden_dim, config.hidden_dim);
    layer.u_cand = Matrix(config.hidden_dim, config.hidden_dim);
    detail::init_uniform(rng, ub, layer.u_update);
    detail::init_uniform(rng, ub, layer.u_reset);
    detail::init_uniform(rng, ub, layer.u_cand);
    layer.b_update.assign(config.hidden_dim, 0.0);
    layer.b_reset.assign(config.hidden_dim, 0.0);
    layer.b_cand.assign(config.hidden_dim, 0.0);
    detail::init_uniform(rng, ub, layer.b_update);
    detail::init_uniform(rng, ub, layer.b_reset);
    detail::init_uniform(rng, ub, layer.b_cand);
  }
  const double pb = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
  p.proj = Matrix(config.embed_dim, config.hidden_dim);
  detail::init_uniform(rng, pb, p.proj);
  p.proj_bias.assign(config.embed_dim, 0.0);
  detail::init_uniform(rng, pb, p.proj_bias);
  return p;
}

// Flat layout: per layer Wz, Wr, Wn, Uz, Ur, Un, bz, br, bn (row-major),
// then P, p_bias. Keep in sync with init_encoder_params draw order.
inline std::vector<double> encoder_params_to_flat(const EncoderParams& p) {
  std::vector<double> flat;
  flat.reserve(encoder_param_count(p.config));
  auto append = [&flat](const std::vector<double>& v) {
    flat.insert(flat.end(), v.begin(), v.end());
  };
  for (const GruLayer& l : p.layers) {
    append(l.w_update.data);
    append(l.w_reset.data);
    append(l.w_cand.data);
    append(l.u_update.data);
    append(l.u_reset.data);
    append(l.u_cand.data);
    append(l.b_update);
    append(l.b_reset);
    append(l.b_cand);
  }
  append(p.proj.data);
  append(p.proj_bias);
  return flat;
}

inline EncoderParams encoder_params_from_flat(const EncoderConfig& config,
                                              std::span<const double> flat) {
  require_shape(static_cast<long>(flat.size()) == encoder_param_count(config),
                "encoder_params_from_flat: wrong parameter count");
  EncoderParams p;
  p.config = config;
  p.layers.resize(config.num_layers);
  std::size_t pos = 0;
  auto take = [&flat, &pos](std::vector<double>& v, std::size_t n) {
    v.assign(flat.begin() + pos, flat.begin() + pos + n);
    pos += n;
  };
  auto take_mat = [&](Matrix& m, int r, int c) {
    m.rows = r;
    m.cols = c;
    take(m.data, static_cast<std::size_t>(r) * c);
  };
  for (int l = 0; l < config.num_layers; ++l) {
    const int in = (l == 0) ? config.input_dim : config.hidden_dim;
    GruLayer& layer = p.layers[l];
    take_mat(layer.w_update, config.hidden_dim, in);
    take_mat(layer.w_reset, config.hidden_dim, in);
    take_mat(layer.w_cand, config.hidden_dim, in);
    take_mat(layer.u_update, config.hidden_dim, config.hidden_dim);
    take_mat(layer.u_reset, config.hidden_dim, config.hidden_dim);
    take_mat(layer.u_cand, config.hidden_dim, config.hidden_dim);
    take(layer.b_update, config.hidden_dim);
    take(layer.b_reset, config.hidden_dim);
    take(layer.b_cand, config.hidden_dim);
  }
  take_mat(p.proj, config.embed_dim, config.hidden_dim);
  take(p.proj_bias, config.embed_dim);
  return p;
}

// Forward-pass intermediates kept for backpropagation.
struct GruLayerCache {
  Matrix h;     // (F+1) x hidden; row 0 is h_0 = 0
  Matrix z;     // F x hidden
  Matrix r;     // F x hidden
  Matrix n;     // F x hidden
  Matrix un_h;  // F x hidden, Un h_{t-1} before the reset gate
};

struct EncodeCache {
  std::vector<GruLayerCache> layers;
};

namespace detail {

// y = M x (+ y if accumulate)
inline void matvec(const Matrix& m, std::span<const double> x,
                   std::span<double> y, bool accumulate) {
  for (int i = 0; i < m.rows; ++i) {
    const double* row = m.data.data() + static_cast<std::size_t>(i) * m.cols;
    double s = accumulate ? y[i] : 0.0;
    for (int j = 0; j < m.cols; ++j) s += row[j] * x[j];
    y[i] = s;
  }
}

// y += M^T x
inline void matvec_transposed_add(const Matrix& m, std::span<const double> x,
                                  std::span<double> y) {
  for (int i = 0; i < m.rows; ++i) {
    const double* row = m.data.data() + static_cast<std::size_t>(i) * m.cols;
    const double xi = x[i];
    for (int j = 0; j < m.cols; ++j) y[j] += row[j] * xi;
  }
}

// M += a b^T
inline void outer_add(std::span<const double> a, std::span<const double> b,
                      Matrix& m) {
  for (int i = 0; i < m.rows; ++i) {
    double* row = m.data.data() + static_cast<std::size_t>(i) * m.cols;
    const double ai = a[i];
    for (int j = 0; j < m.cols; ++j) row[j] += ai * b[j];
  }
}

inline void run_forward(const EncoderParams& p, const UtteranceFeatures& u,
                        std::vector<double>& embedding, EncodeCache* cache) {
  const EncoderConfig& c = p.config;
  require_shape(u.dim() == c.input_dim,
                "encode: utterance dim " + std::to_string(u.dim()) +
                    " != encoder input dim " + std::to_string(c.input_dim));
  require_config(u.num_frames() >= 1, "encode: utterance must have frames");
  const int F = u.num_frames();
  const int H = c.hidden_dim;

  if (cache) cache->layers.resize(c.num_layers);
  Matrix below = u.frames;  // inputs to the current layer, F x in
  for (int l = 0; l < c.num_layers; ++l) {
    const GruLayer& layer = p.layers[l];
    GruLayerCache local;
    GruLayerCache& lc = cache ? cache->layers[l] : local;
    lc.h = Matrix(F + 1, H);
    lc.z = Matrix(F, H);
    lc.r = Matrix(F, H);
    lc.n = Matrix(F, H);
    lc.un_h = Matrix(F, H);
    for (int t = 0; t < F; ++t) {
      auto x_t = below.row(t);
      auto h_prev = lc.h.row(t);
      auto z = lc.z.row(t);
      auto r = lc.r.row(t);
      auto n = lc.n.row(t);
      auto un_h = lc.un_h.row(t);
      matvec(layer.w_update, x_t, z, false);
      matvec(layer.u_update, h_prev, z, true);
      matvec(layer.w_reset, x_t, r, false);
      matvec(layer.u_reset, h_prev, r, true);
      matvec(layer.u_cand, h_prev, un_h, false);
      matvec(layer.w_cand, x_t, n, false);
      for (int i = 0; i < H; ++i) {
        z[i] = sigmoid(z[i] + layer.b_update[i]);
        r[i] = sigmoid(r[i] + layer.b_reset[i]);
        n[i] = std::tanh(n[i] + r[i] * un_h[i] + layer.b_cand[i]);
        lc.h(t + 1, i) = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
      }
    }
    below = lc.h;
    // Drop the h_0 row so the next layer sees F frames.
    below.data.erase(below.data.begin(), below.data.begin() + H);
    below.rows = F;
  }

  embedding.assign(c.embed_dim, 0.0);
  matvec(p.proj, below.row(F - 1), embedding, false);
  for (int i = 0; i < c.embed_dim; ++i) embedding[i] += p.proj_bias[i];
}

}  // namespace detail

/// Deterministic embedding of one utterance.
inline std::vector<double> encode(const EncoderParams& p,
                                  const UtteranceFeatures& u) {
  std::vector<double> embedding;
  detail::run_forward(p, u, embedding, nullptr);
  return embedding;
}

inline std::vector<double> encode_with_cache(const EncoderParams& p,
                                             const UtteranceFeatures& u,
                                             EncodeCache& cache) {
  std::vector<double> embedding;
  detail::run_forward(p, u, embedding, &cache);
  return embedding;
}

// Reverse-mode pass for one utterance. d_embedding is dL/d(embedding);
// the parameter gradient is accumulated into grad_flat (same layout as
// encoder_params_to_flat).
inline void encoder_backward_accumulate(const EncoderParams& p,
                                        const UtteranceFeatures& u,
                                        const EncodeCache& cache,
                                        std::span<const double> d_embedding,
                                        std::span<double> grad_flat) {
  const EncoderConfig& c = p.config;
  require_shape(static_cast<int>(d_embedding.size()) == c.embed_dim,
                "encoder_backward: upstream gradient has wrong dim");
  require_shape(static_cast<long>(grad_flat.size()) ==
                    encoder_param_count(c),
                "encoder_backward: gradient buffer has wrong size");
  const int F = u.num_frames();
  const int H = c.hidden_dim;

  // Locate each tensor's slice of the flat gradient.
  struct LayerGrad {
    std::span<double> wz, wr, wn, uz, ur, un, bz, br, bn;
  };
  std::vector<LayerGrad> lg(c.num_layers);
  std::size_t pos = 0;
  auto slice = [&grad_flat, &pos](std::size_t n) {
    std::span<double> s = grad_flat.subspan(pos, n);
    pos += n;
    return s;
  };
  for (int l = 0; l < c.num_layers; ++l) {
    const std::size_t in = (l == 0) ? c.input_dim : c.hidden_dim;
    lg[l].wz = slice(H * in);
    lg[l].wr = slice(H * in);
    lg[l].wn = slice(H * in);
    lg[l].uz = slice(static_cast<std::size_t>(H) * H);
    lg[l].ur = slice(static_cast<std::size_t>(H) * H);
    lg[l].un = slice(static_cast<std::size_t>(H) * H);
    lg[l].bz = slice(H);
    lg[l].br = slice(H);
    lg[l].bn = slice(H);
  }
  std::span<double> g_proj = slice(static_cast<std::size_t>(c.embed_dim) * H);
  std::span<double> g_proj_bias = slice(c.embed_dim);

  // Projection layer: embedding = P h_F + b.
  const GruLayerCache& top = cache.layers[c.num_layers - 1];
  auto h_top = top.h.row(F);
  Matrix d_upstream(F, H);  // per-time gradient entering the current layer
  for (int i = 0; i < c.embed_dim; ++i) {
    g_proj_bias[i] += d_embedding[i];
    const double gi = d_embedding[i];
    double* prow = g_proj.data() + static_cast<std::size_t>(i) * H;
    const double* prm = p.proj.data.data() + static_cast<std::size_t>(i) * H;
    for (int j = 0; j < H; ++j) {
      prow[j] += gi * h_top[j];
      d_upstream(F - 1, j) += prm[j] * gi;
    }
  }

  std::vector<double> dh(H), dh_prev(H), da_z(H), da_r(H), da_n(H), tmp(H);
  for (int l = c.num_layers - 1; l >= 0; --l) {
    const GruLayer& layer = p.layers[l];
    const GruLayerCache& lc = cache.layers[l];
    // Inputs this layer saw during the forward pass.
    const GruLayerCache* below_cache =
        (l == 0) ? nullptr : &cache.layers[l - 1];
    const std::size_t in =
        (l == 0) ? static_cast<std::size_t>(c.input_dim)
                 : static_cast<std::size_t>(H);

    Matrix d_below(F, static_cast<int>(in));
    std::fill(dh.begin(), dh.end(), 0.0);
    for (int t = F - 1; t >= 0; --t) {
      axpy(1.0, d_upstream.row(t), dh);
      auto z = lc.z.row(t);
      auto r = lc.r.row(t);
      auto n = lc.n.row(t);
      auto un_h = lc.un_h.row(t);
      auto h_prev = lc.h.row(t);
      std::span<const double> x_t =
          (l == 0) ? u.frames.row(t) : below_cache->h.row(t + 1);

      for (int i = 0; i < H; ++i) {
        const double dz = dh[i] * (h_prev[i] - n[i]);
        const double dn = dh[i] * (1.0 - z[i]);
        dh_prev[i] = dh[i] * z[i];
        da_n[i] = dn * (1.0 - n[i] * n[i]);
        const double dr = da_n[i] * un_h[i];
        tmp[i] = da_n[i] * r[i];  // gradient at Un h_{t-1}
        da_z[i] = dz * z[i] * (1.0 - z[i]);
        da_r[i] = dr * r[i] * (1.0 - r[i]);
      }

      auto outer_into = [](std::span<double> g, std::span<const double> a,
                           std::span<const double> b) {
        for (std::size_t i = 0; i < a.size(); ++i) {
          double* grow = g.data() + i * b.size();
          const double ai = a[i];
          for (std::size_t j = 0; j < b.size(); ++j) grow[j] += ai * b[j];
        }
      };

      outer_into(lg[l].wz, da_z, x_t);
      outer_into(lg[l].wr, da_r, x_t);
      outer_into(lg[l].wn, da_n, x_t);
      outer_into(lg[l].uz, da_z, h_prev);
      outer_into(lg[l].ur, da_r, h_prev);
      outer_into(lg[l].un, tmp, h_prev);
      axpy(1.0, da_z, lg[l].bz);
      axpy(1.0, da_r, lg[l].br);
      axpy(1.0, da_n, lg[l].bn);

      detail::matvec_transposed_add(layer.u_update, da_z, dh_prev);
      detail::matvec_transposed_add(layer.u_reset, da_r, dh_prev);
      detail::matvec_transposed_add(layer.u_cand, tmp, dh_prev);

      auto dx = d_below.row(t);
      detail::matvec_transposed_add(layer.w_update, da_z, dx);
      detail::matvec_transposed_add(layer.w_reset, da_r, dx);
      detail::matvec_transposed_add(layer.w_cand, da_n, dx);

      std::swap(dh, dh_prev);
      std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
    }
    d_upstream = std::move(d_below);
  }
}

/// Exact parameter gradient of sum_i <upstream_i, encode(params, u_i)>,
/// i.e. backpropagation through the encoder summed over a batch.
inline std::vector<double> encode_batch_with_grads(
    const EncoderParams& p, const std::vector<UtteranceFeatures>& batch,
    const std::vector<std::vector<double>>& upstream) {
  require_shape(batch.size() == upstream.size(),
                "encode_batch_with_grads: upstream count != utterance count");
  std::vector<double> grad(encoder_param_count(p.config), 0.0);
  EncodeCache cache;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    encode_with_cache(p, batch[i], cache);
    encoder_backward_accumulate(p, batch[i], cache, upstream[i], grad);
  }
  return grad;
}

}  // namespace dialemb
