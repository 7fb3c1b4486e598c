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

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "redi/autodiff.hpp"
#include "redi/optim.hpp"
#include "redi/tensor.hpp"

namespace redi::testing {

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;
  std::size_t entries = 0;
};

using LossBuilder = std::function<Var(Tape&, const std::map<std::string, Var>&)>;

// Compares reverse-mode gradients with central differences over every entry
// of every tensor in `params`. Relative error is |a - n| / max(|a|, |n|, floor);
// the floor keeps entries whose true gradient is ~0 from dividing by noise.
inline GradCheck check_gradients(std::map<std::string, Tensor>& params, const LossBuilder& build, double h = 1e-5,
                                 double floor = 1e-6) {
  auto evaluate = [&](bool grads, std::map<std::string, Tensor>* out) {
    Tape tape(grads);
    std::map<std::string, Var> vars;
    for (auto& [name, t] : params) vars[name] = tape.parameter(name, t);
    Var loss = build(tape, vars);
    const double v = tape.value(loss)[0];
    if (out) *out = tape.backprop(loss);
    return v;
  };
  std::map<std::string, Tensor> analytic;
  evaluate(true, &analytic);
  GradCheck res;
  for (auto& [name, t] : params) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double up = evaluate(false, nullptr);
      t[i] = orig - h;
      const double down = evaluate(false, nullptr);
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.at(name)[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++res.entries;
      if (rel > res.max_rel) {
        res.max_rel = rel;
        res.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

// Same check for a loss whose graph registers the entries of `store` itself,
// as JointDenoiser::forward does.
inline GradCheck check_store_gradients(ParamStore& store, const std::function<Var(Tape&)>& build, double h = 1e-5,
                                       double floor = 1e-6) {
  std::map<std::string, Tensor> analytic;
  {
    Tape tape;
    Var loss = build(tape);
    analytic = tape.backprop(loss);
  }
  auto value = [&] {
    Tape tape(false);
    return tape.value(build(tape))[0];
  };
  GradCheck res;
  for (auto& [name, slot] : store.slots()) {
    Tensor& t = slot.value;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double up = value();
      t[i] = orig - h;
      const double down = value();
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.at(name)[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++res.entries;
      if (rel > res.max_rel) {
        res.max_rel = rel;
        res.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace redi::testing
