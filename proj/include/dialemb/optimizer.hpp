// dialemb/optimizer.hpp
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
#include <span>
#include <vector>

#include "dialemb/error.hpp"

namespace dialemb {

// Adam with a stepwise learning-rate decay: the rate drops by a fixed
// factor once per decay_interval steps, i.e.
//   lr(step) = base_lr * decay_factor^floor(step / decay_interval)
struct AdamConfig {
  double base_lr = 4e-4;
  double decay_factor = 0.98;
  std::int64_t decay_interval = 10000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<double> m;  // first moments
  std::vector<double> v;  // second moments
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(const AdamConfig& cfg, std::size_t param_count)
      : config(cfg), m(param_count, 0.0), v(param_count, 0.0) {}
};

inline double effective_lr(const AdamConfig& cfg, std::int64_t step) {
  return cfg.base_lr *
         std::pow(cfg.decay_factor,
                  static_cast<double>(step / cfg.decay_interval));
}

inline double effective_lr(const AdamState& state) {
  return effective_lr(state.config, state.step);
}

/// One Adam update in place. Throws NumericError on a non-finite gradient
/// without touching params or state.
inline void adam_step(AdamState& state, std::span<double> params,
                      std::span<const double> grads) {
  require_shape(params.size() == grads.size() &&
                    params.size() == state.m.size(),
                "adam_step: size mismatch");
  for (double g : grads)
    if (!std::isfinite(g))
      throw NumericError("adam_step: non-finite gradient");

  const AdamConfig& c = state.config;
  const double lr = effective_lr(state);
  const std::int64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
  state.step = t;
}

/// Scales grads in place so the global L2 norm is at most max_norm.
/// max_norm <= 0 disables clipping.
inline double clip_global_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

}  // namespace dialemb
