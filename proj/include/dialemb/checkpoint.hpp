// dialemb/checkpoint.hpp
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

#include <fstream>
#include <string>
#include <vector>

#include "dialemb/encoder.hpp"
#include "dialemb/error.hpp"
#include "dialemb/losses.hpp"
#include "dialemb/optimizer.hpp"

#include "json.hpp"

namespace dialemb {

// Everything trainable beyond the encoder weights: the similarity scale
// of the centroid-softmax losses and the rejection temperature, when the
// configuration makes them learnable.
struct TrainableExtras {
  bool has_scale = false;
  LossScaleParams scale;
  bool has_temperature = false;
  double temperature = 10.0;
};

// Versioned JSON checkpoint. Doubles survive the round-trip exactly
// (shortest re-parsing representation), so save/load is lossless at
// 64-bit precision.
struct Checkpoint {
  EncoderConfig encoder_config;
  std::vector<double> encoder_flat;
  TrainableExtras extras;
  AdamState adam;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& cp) {
  nlohmann::json j;
  j["version"] = 1;
  j["encoder"] = {{"input_dim", cp.encoder_config.input_dim},
                  {"num_layers", cp.encoder_config.num_layers},
                  {"hidden_dim", cp.encoder_config.hidden_dim},
                  {"embed_dim", cp.encoder_config.embed_dim}};
  j["encoder_params"] = cp.encoder_flat;
  j["extras"] = {{"has_scale", cp.extras.has_scale},
                 {"scale", cp.extras.scale.scale},
                 {"bias", cp.extras.scale.bias},
                 {"has_temperature", cp.extras.has_temperature},
                 {"temperature", cp.extras.temperature}};
  j["adam"] = {{"base_lr", cp.adam.config.base_lr},
               {"decay_factor", cp.adam.config.decay_factor},
               {"decay_interval", cp.adam.config.decay_interval},
               {"beta1", cp.adam.config.beta1},
               {"beta2", cp.adam.config.beta2},
               {"epsilon", cp.adam.config.epsilon},
               {"step", cp.adam.step},
               {"m", cp.adam.m},
               {"v", cp.adam.v}};
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  require_config(j.value("version", 0) == 1,
                 "checkpoint: unsupported version");
  Checkpoint cp;
  const auto& e = j.at("encoder");
  cp.encoder_config.input_dim = e.at("input_dim").get<int>();
  cp.encoder_config.num_layers = e.at("num_layers").get<int>();
  cp.encoder_config.hidden_dim = e.at("hidden_dim").get<int>();
  cp.encoder_config.embed_dim = e.at("embed_dim").get<int>();
  cp.encoder_flat = j.at("encoder_params").get<std::vector<double>>();
  require_config(static_cast<long>(cp.encoder_flat.size()) ==
                     encoder_param_count(cp.encoder_config),
                 "checkpoint: parameter count does not match encoder config");
  const auto& x = j.at("extras");
  cp.extras.has_scale = x.at("has_scale").get<bool>();
  cp.extras.scale.scale = x.at("scale").get<double>();
  cp.extras.scale.bias = x.at("bias").get<double>();
  cp.extras.has_temperature = x.at("has_temperature").get<bool>();
  cp.extras.temperature = x.at("temperature").get<double>();
  const auto& a = j.at("adam");
  cp.adam.config.base_lr = a.at("base_lr").get<double>();
  cp.adam.config.decay_factor = a.at("decay_factor").get<double>();
  cp.adam.config.decay_interval = a.at("decay_interval").get<std::int64_t>();
  cp.adam.config.beta1 = a.at("beta1").get<double>();
  cp.adam.config.beta2 = a.at("beta2").get<double>();
  cp.adam.config.epsilon = a.at("epsilon").get<double>();
  cp.adam.step = a.at("step").get<std::int64_t>();
  cp.adam.m = a.at("m").get<std::vector<double>>();
  cp.adam.v = a.at("v").get<std::vector<double>>();
  return cp;
}

inline void save_checkpoint(const Checkpoint& cp, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require_config(out.good(), "save_checkpoint: cannot open " + path);
  out << checkpoint_to_json(cp).dump(2) << "\n";
  require_config(out.good(), "save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require_config(in.good(), "load_checkpoint: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  require_config(!j.is_discarded(),
                 "load_checkpoint: invalid JSON in " + path);
  return checkpoint_from_json(j);
}

}  // namespace dialemb
