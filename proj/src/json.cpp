// Copyright 2026 The FreqAdapter Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fqa/json.hpp"

#include "fqa/errors.hpp"

namespace fqa {

void to_json(json& j, const InitSpec& s) {
  j = json{{"kind", s.kind == InitKind::kZeroResidual ? "zero_residual" : "small_random"},
           {"seed", s.seed},
           {"sigma", s.sigma}};
}

void from_json(const json& j, InitSpec& s) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "zero_residual") {
    s.kind = InitKind::kZeroResidual;
  } else if (kind == "small_random") {
    s.kind = InitKind::kSmallRandom;
  } else {
    throw ConfigError("unknown init kind '" + kind + "'");
  }
  s.seed = j.at("seed").get<std::uint64_t>();
  s.sigma = j.at("sigma").get<double>();
}

void to_json(json& j, const AdapterConfig& c) {
  j = json{{"d_v", c.d_v},       {"d_t", c.d_t},         {"h", c.h},
           {"n_scales", c.n_scales}, {"w", c.w},         {"grid_h", c.grid_h},
           {"grid_w", c.grid_w}, {"has_cls", c.has_cls}, {"init", c.init},
           {"residual", c.residual}};
}

void from_json(const json& j, AdapterConfig& c) {
  c.d_v = j.at("d_v").get<std::size_t>();
  c.d_t = j.at("d_t").get<std::size_t>();
  c.h = j.at("h").get<std::size_t>();
  c.n_scales = j.at("n_scales").get<std::size_t>();
  c.w = j.at("w").get<double>();
  c.grid_h = j.at("grid_h").get<std::size_t>();
  c.grid_w = j.at("grid_w").get<std::size_t>();
  c.has_cls = j.at("has_cls").get<bool>();
  c.init = j.at("init").get<InitSpec>();
  c.residual = j.at("residual").get<bool>();
}

void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"n_pairs", s.n_pairs},
           {"grid_h", s.grid_h},
           {"grid_w", s.grid_w},
           {"has_cls", s.has_cls},
           {"d_v", s.d_v},
           {"d_t", s.d_t},
           {"s_t", s.s_t},
           {"captions_per_image", s.captions_per_image},
           {"spectrum", s.spectrum},
           {"noise", s.noise},
           {"shared_norm", s.shared_norm},
           {"field_norm", s.field_norm},
           {"text_mix", s.text_mix},
           {"seed", s.seed}};
}

void from_json(const json& j, SyntheticSpec& s) {
  s.n_pairs = j.at("n_pairs").get<std::size_t>();
  s.grid_h = j.at("grid_h").get<std::size_t>();
  s.grid_w = j.at("grid_w").get<std::size_t>();
  s.has_cls = j.at("has_cls").get<bool>();
  s.d_v = j.at("d_v").get<std::size_t>();
  s.d_t = j.at("d_t").get<std::size_t>();
  s.s_t = j.at("s_t").get<std::size_t>();
  s.captions_per_image = j.at("captions_per_image").get<std::size_t>();
  s.spectrum = j.at("spectrum").get<double>();
  s.noise = j.at("noise").get<double>();
  s.shared_norm = j.at("shared_norm").get<double>();
  s.field_norm = j.at("field_norm").get<double>();
  s.text_mix = j.at("text_mix").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
}

}  // namespace fqa
