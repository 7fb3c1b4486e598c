// Copyright 2026 The redi-toy Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "redi/denoiser.hpp"
#include "redi/optim.hpp"
#include "redi/rng.hpp"

namespace redi::testing {

// Overwrites every parameter with N(0, scale^2) entries so that the zero
// initialisation of gates and heads does not hide any pathway.
inline void randomize(ParamStore& params, Rng rng, double scale = 0.3) {
  for (auto& [name, slot] : params.slots())
    for (double& v : slot.value.values()) v = scale * rng.normal();
}

inline DenoiserConfig tiny_config(FusionMode fusion = FusionMode::Merged,
                                  PredictionKind kind = PredictionKind::Noise) {
  DenoiserConfig c;
  c.layers = 1;
  c.heads = 2;
  c.hidden_dim = 8;
  c.token_count = 2;
  c.x_channels = 2;
  c.z_channels = 3;
  c.num_classes = 3;
  c.mlp_ratio = 2;
  c.fusion = fusion;
  c.prediction = kind;
  return c;
}

}  // namespace redi::testing
