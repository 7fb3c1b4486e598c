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

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "redi/errors.hpp"
#include "redi/tensor.hpp"

namespace redi {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Named parameters plus AdamW moment state. Iteration order is the
// lexicographic order of names, which fixes serialization order too.
class ParamStore {
 public:
  struct Slot {
    Tensor value;
    Tensor m;
    Tensor v;
  };

  void add(const std::string& name, Tensor value) {
    require(!slots_.contains(name), "ParamStore: duplicate parameter " + name);
    Tensor m = Tensor::zeros(value.shape());
    Tensor v = Tensor::zeros(value.shape());
    slots_.emplace(name, Slot{std::move(value), std::move(m), std::move(v)});
  }

  bool contains(const std::string& name) const { return slots_.contains(name); }

  const Tensor& operator[](const std::string& name) const { return slot(name).value; }
  Tensor& mutable_value(const std::string& name) { return slot(name).value; }

  const Slot& slot(const std::string& name) const {
    auto it = slots_.find(name);
    require(it != slots_.end(), "ParamStore: unknown parameter " + name);
    return it->second;
  }
  Slot& slot(const std::string& name) {
    auto it = slots_.find(name);
    require(it != slots_.end(), "ParamStore: unknown parameter " + name);
    return it->second;
  }

  const std::map<std::string, Slot>& slots() const noexcept { return slots_; }
  std::map<std::string, Slot>& slots() noexcept { return slots_; }

  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t s) noexcept { step_ = s; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, s] : slots_) n += s.value.size();
    return n;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.step_ != b.step_ || a.slots_.size() != b.slots_.size()) return false;
    for (auto ia = a.slots_.begin(), ib = b.slots_.begin(); ia != a.slots_.end(); ++ia, ++ib) {
      if (ia->first != ib->first || !(ia->second.value == ib->second.value) ||
          !(ia->second.m == ib->second.m) || !(ia->second.v == ib->second.v))
        return false;
    }
    return true;
  }

 private:
  std::map<std::string, Slot> slots_;
  std::uint64_t step_ = 0;
};

// One decoupled-weight-decay Adam update over every parameter.
inline void adamw_step(ParamStore& params, const std::map<std::string, Tensor>& grads, const AdamWConfig& cfg) {
  for (const auto& [name, _] : params.slots())
    require(grads.contains(name), "adamw_step: missing gradient for " + name);
  const std::uint64_t t = params.step() + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (auto& [name, s] : params.slots()) {
    const Tensor& g = grads.at(name);
    s.value.check_same(g, "adamw_step");
    for (std::size_t i = 0; i < g.size(); ++i) {
      double& p = s.value[i];
      p -= cfg.lr * cfg.weight_decay * p;
      s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g[i];
      s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p -= cfg.lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + cfg.eps);
    }
  }
  params.set_step(t);
}

}  // namespace redi
