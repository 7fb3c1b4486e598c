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

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "redi/denoiser.hpp"
#include "redi/errors.hpp"
#include "redi/sampling.hpp"
#include "redi/schedule.hpp"
#include "redi/toyworld.hpp"
#include "redi/training.hpp"

namespace redi {

// Everything a run needs, flattened into one `key = value` file.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";

  ToyWorldConfig toy;
  std::size_t pca_rank = 8;
  std::size_t pca_samples = 2048;

  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t hidden_dim = 128;
  std::size_t mlp_ratio = 4;
  FusionMode fusion = FusionMode::Merged;

  TrainConfig train;
  std::size_t ddpm_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;

  GuidanceConfig guidance;
  std::size_t sample_count = 1024;
  std::size_t eval_reference = 10000;
  std::size_t sliced_projections = 64;
  std::uint64_t eval_seed = 99;

  std::size_t checkpoint_every = 500;
  std::size_t eval_every = 0;
  std::size_t eval_samples = 256;
  std::size_t eval_steps = 50;

  DenoiserConfig denoiser() const {
    DenoiserConfig d;
    d.layers = layers;
    d.heads = heads;
    d.hidden_dim = hidden_dim;
    d.mlp_ratio = mlp_ratio;
    d.token_count = toy.token_count;
    d.x_channels = toy.x_channels;
    d.z_channels = pca_rank;
    d.num_classes = toy.num_classes;
    d.fusion = fusion;
    d.prediction = train.objective == Objective::DdpmNoise ? PredictionKind::Noise : PredictionKind::Velocity;
    return d;
  }

  NoiseProcess process() const {
    NoiseProcess p;
    p.objective = train.objective;
    p.ddpm = build_linear_ddpm(ddpm_steps, beta_start, beta_end);
    return p;
  }

  EvalOptions eval_options() const { return {eval_reference, sliced_projections, eval_seed}; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    try {
      denoiser().validate();
      train.validate();
      guidance.validate();
      (void)build_linear_ddpm(ddpm_steps, beta_start, beta_end);
    } catch (const ContractViolation& e) {
      fail(e.what());
    }
    if (pca_rank < 1 || pca_rank > toy.z_full_channels) fail("pca_rank must lie in [1, z_full_channels]");
    if (pca_samples <= toy.z_full_channels) fail("pca_samples must exceed z_full_channels");
    if (toy.mode_std <= 0.0) fail("mode_std must be > 0");
  }
};

namespace detail {

template <class T>
bool parse_number(const std::string& s, T& out) {
  if constexpr (std::is_floating_point_v<T>) {
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return !s.empty() && end == s.c_str() + s.size();
  } else {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
  }
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<bool(RunConfig&, const std::string&)> set;
};

template <class Get>
Field make_field(std::string key, Get ref) {
  using T = std::remove_reference_t<decltype(ref(std::declval<RunConfig&>()))>;
  Field f;
  f.key = std::move(key);
  f.get = [ref](const RunConfig& c) {
    const T& v = ref(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, bool>) return std::string(v ? "true" : "false");
    else if constexpr (std::is_same_v<T, std::string>) return "\"" + v + "\"";
    else if constexpr (std::is_floating_point_v<T>) return format_double(v);
    else return std::to_string(v);
  };
  f.set = [ref](RunConfig& c, const std::string& s) {
    T& v = ref(c);
    if constexpr (std::is_same_v<T, bool>) {
      if (s == "true") v = true;
      else if (s == "false") v = false;
      else return false;
      return true;
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (s.size() < 2 || s.front() != '"' || s.back() != '"') return false;
      v = s.substr(1, s.size() - 2);
      return true;
    } else {
      return parse_number(s, v);
    }
  };
  return f;
}

template <class E>
Field enum_field(std::string key, std::function<E&(RunConfig&)> ref, std::vector<std::pair<E, std::string>> names) {
  Field f;
  f.key = std::move(key);
  f.get = [ref, names](const RunConfig& c) {
    const E v = ref(const_cast<RunConfig&>(c));
    for (const auto& [e, n] : names)
      if (e == v) return "\"" + n + "\"";
    return std::string("\"?\"");
  };
  f.set = [ref, names](RunConfig& c, const std::string& s) {
    std::string bare = s;
    if (bare.size() >= 2 && bare.front() == '"' && bare.back() == '"') bare = bare.substr(1, bare.size() - 2);
    for (const auto& [e, n] : names)
      if (n == bare) {
        ref(c) = e;
        return true;
      }
    return false;
  };
  return f;
}

#define REDI_FIELD(key, member) make_field(key, [](RunConfig& c) -> auto& { return c.member; })

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(REDI_FIELD("seed", seed));
    f.push_back(REDI_FIELD("out_dir", out_dir));
    f.push_back(REDI_FIELD("num_classes", toy.num_classes));
    f.push_back(REDI_FIELD("modes_per_class", toy.modes_per_class));
    f.push_back(REDI_FIELD("token_count", toy.token_count));
    f.push_back(REDI_FIELD("x_channels", toy.x_channels));
    f.push_back(REDI_FIELD("z_full_channels", toy.z_full_channels));
    f.push_back(REDI_FIELD("center_radius", toy.center_radius));
    f.push_back(REDI_FIELD("mode_std", toy.mode_std));
    f.push_back(REDI_FIELD("toy_seed", toy.seed));
    f.push_back(REDI_FIELD("pca_rank", pca_rank));
    f.push_back(REDI_FIELD("pca_samples", pca_samples));
    f.push_back(REDI_FIELD("layers", layers));
    f.push_back(REDI_FIELD("heads", heads));
    f.push_back(REDI_FIELD("hidden_dim", hidden_dim));
    f.push_back(REDI_FIELD("mlp_ratio", mlp_ratio));
    f.push_back(enum_field<FusionMode>("fusion", [](RunConfig& c) -> FusionMode& { return c.fusion; },
                                       {{FusionMode::Merged, "merged"}, {FusionMode::Separate, "separate"}}));
    f.push_back(enum_field<Objective>("objective", [](RunConfig& c) -> Objective& { return c.train.objective; },
                                      {{Objective::DdpmNoise, "ddpm"}, {Objective::InterpolantVelocity, "interpolant"}}));
    f.push_back(REDI_FIELD("lambda_z", train.lambda_z));
    f.push_back(REDI_FIELD("p_drop", train.p_drop));
    f.push_back(REDI_FIELD("p_class_drop", train.p_class_drop));
    f.push_back(REDI_FIELD("semantic_input", train.semantic_input));
    f.push_back(REDI_FIELD("batch_size", train.batch_size));
    f.push_back(REDI_FIELD("steps", train.total_steps));
    f.push_back(REDI_FIELD("lr", train.optimizer.lr));
    f.push_back(REDI_FIELD("beta1", train.optimizer.beta1));
    f.push_back(REDI_FIELD("beta2", train.optimizer.beta2));
    f.push_back(REDI_FIELD("adam_eps", train.optimizer.eps));
    f.push_back(REDI_FIELD("weight_decay", train.optimizer.weight_decay));
    f.push_back(REDI_FIELD("ddpm_steps", ddpm_steps));
    f.push_back(REDI_FIELD("beta_start", beta_start));
    f.push_back(REDI_FIELD("beta_end", beta_end));
    f.push_back(REDI_FIELD("sample_steps", guidance.steps));
    f.push_back(enum_field<CfgMode>("cfg_mode", [](RunConfig& c) -> CfgMode& { return c.guidance.cfg_mode; },
                                    {{CfgMode::Off, "off"}, {CfgMode::VaeOnly, "vae-only"}, {CfgMode::Both, "both"}}));
    f.push_back(REDI_FIELD("cfg_weight", guidance.cfg_weight));
    f.push_back(REDI_FIELD("rg", guidance.rg_enabled));
    f.push_back(REDI_FIELD("rg_weight", guidance.rg_weight));
    f.push_back(REDI_FIELD("diffusion_scale", guidance.diffusion_scale));
    f.push_back(enum_field<GuidanceOrder>(
        "guidance_order", [](RunConfig& c) -> GuidanceOrder& { return c.guidance.order; },
        {{GuidanceOrder::CfgThenRg, "cfg-then-rg"}, {GuidanceOrder::RgThenCfg, "rg-then-cfg"}}));
    f.push_back(REDI_FIELD("sample_count", sample_count));
    f.push_back(REDI_FIELD("eval_reference", eval_reference));
    f.push_back(REDI_FIELD("sliced_projections", sliced_projections));
    f.push_back(REDI_FIELD("eval_seed", eval_seed));
    f.push_back(REDI_FIELD("checkpoint_every", checkpoint_every));
    f.push_back(REDI_FIELD("eval_every", eval_every));
    f.push_back(REDI_FIELD("eval_samples", eval_samples));
    f.push_back(REDI_FIELD("eval_steps", eval_steps));
    return f;
  }();
  return table;
}

#undef REDI_FIELD

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Applies `key = value` lines on top of `base`. `#` starts a comment
// outside quotes. Unknown keys, repeated keys and malformed values are
// errors that name the line and field.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected `key = value`");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto& table = detail::fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const detail::Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(where + ": unknown key `" + key + "`");
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key `" + key + "`");
    if (!it->set(base, value)) throw ConfigError(where + ": invalid value for `" + key + "`: " + value);
  }
  base.validate();
  return base;
}

inline std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), RunConfig{}, path);
}

}  // namespace redi
