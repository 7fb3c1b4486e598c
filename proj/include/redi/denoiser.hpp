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
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "redi/autodiff.hpp"
#include "redi/errors.hpp"
#include "redi/optim.hpp"
#include "redi/rng.hpp"
#include "redi/tensor.hpp"

namespace redi {

enum class FusionMode { Merged, Separate };
enum class PredictionKind { Noise, Velocity };

struct DenoiserConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t hidden_dim = 128;
  std::size_t token_count = 16;
  std::size_t x_channels = 4;
  std::size_t z_channels = 8;
  std::size_t num_classes = 8;  // 1 means unconditional
  std::size_t mlp_ratio = 4;
  FusionMode fusion = FusionMode::Merged;
  PredictionKind prediction = PredictionKind::Noise;

  std::size_t sequence_length() const { return fusion == FusionMode::Merged ? token_count : 2 * token_count; }
  std::size_t null_label() const { return num_classes; }

  void validate() const {
    require(layers >= 1 && heads >= 1 && hidden_dim >= 1 && token_count >= 1 && x_channels >= 1 &&
                z_channels >= 1 && num_classes >= 1 && mlp_ratio >= 1,
            "DenoiserConfig: all counts must be >= 1");
    require(hidden_dim % heads == 0, "DenoiserConfig: hidden_dim must be divisible by heads");
    require(hidden_dim % 2 == 0, "DenoiserConfig: hidden_dim must be even");
  }
};

struct DenoiserPrediction {
  Tensor out_x;
  Tensor out_z;
};

// The all-zeros input that stands for "no semantic tokens".
inline Tensor null_semantic(const Tensor& z_like) { return Tensor::zeros(z_like.shape()); }

// Standard sinusoidal features [cos(t f_i), sin(t f_i)] with geometric
// frequencies; one row per entry of `positions`.
inline Tensor sinusoidal_features(std::span<const double> positions, std::size_t dim, double max_period = 10000.0) {
  require(dim % 2 == 0, "sinusoidal_features: dim must be even");
  const std::size_t half = dim / 2;
  Tensor out({positions.size(), dim});
  for (std::size_t r = 0; r < positions.size(); ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(max_period) * double(i) / double(half));
      out.at(r, i) = std::cos(positions[r] * freq);
      out.at(r, half + i) = std::sin(positions[r] * freq);
    }
  }
  return out;
}

// Spatial position of every sequence slot. In separate mode the z block
// reuses the x block's positions.
inline std::vector<std::size_t> position_ids(const DenoiserConfig& cfg) {
  std::vector<std::size_t> ids(cfg.sequence_length());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i % cfg.token_count;
  return ids;
}

// 0 for x slots, 1 for z slots.
inline std::vector<std::size_t> modality_ids(const DenoiserConfig& cfg) {
  std::vector<std::size_t> ids(cfg.sequence_length(), 0);
  for (std::size_t i = cfg.token_count; i < ids.size(); ++i) ids[i] = 1;
  return ids;
}

// Fixed positional table, one row per sequence slot.
inline Tensor position_table(const DenoiserConfig& cfg, std::span<const std::size_t> token_positions = {}) {
  std::vector<double> pos;
  const auto ids = position_ids(cfg);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t spatial = token_positions.empty() ? ids[i] : token_positions[ids[i]];
    pos.push_back(double(spatial));
  }
  return sinusoidal_features(pos, cfg.hidden_dim);
}

// Time input fed to the sinusoidal embedding: DDPM step index as is,
// interpolant time stretched onto the same range.
inline double model_time(const DenoiserConfig& cfg, double t) {
  return cfg.prediction == PredictionKind::Velocity ? 1000.0 * t : t;
}

class JointDenoiser {
 public:
  struct Outputs {
    Var x;  // [B*L, C_x]
    Var z;  // [B*L, C'_z]
  };

  JointDenoiser() = default;
  JointDenoiser(DenoiserConfig cfg, ParamStore params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
  }

  // adaLN-zero initialisation: residual gates, final modulation and both
  // heads start at zero, so the fresh model is the zero map.
  static JointDenoiser create(const DenoiserConfig& cfg, Rng rng) {
    cfg.validate();
    ParamStore p;
    const std::size_t d = cfg.hidden_dim;
    std::uint64_t stream = 0;
    auto xavier = [&](const std::string& name, std::size_t in, std::size_t out) {
      Rng r = rng.fork(stream++);
      const double limit = std::sqrt(6.0 / double(in + out));
      p.add(name, r.uniform({in, out}, -limit, limit));
    };
    auto normal = [&](const std::string& name, Shape shape, double std) {
      Rng r = rng.fork(stream++);
      Tensor t = r.normal(std::move(shape));
      t *= std;
      p.add(name, std::move(t));
    };
    auto zeros = [&](const std::string& name, Shape shape) { p.add(name, Tensor::zeros(std::move(shape))); };

    xavier("embed_x.weight", cfg.x_channels, d);
    xavier("embed_z.weight", cfg.z_channels, d);
    if (cfg.fusion == FusionMode::Separate) normal("modality_embed", {2, d}, 0.02);
    normal("t_embed.fc1.weight", {d, d}, 0.02);
    zeros("t_embed.fc1.bias", {d});
    normal("t_embed.fc2.weight", {d, d}, 0.02);
    zeros("t_embed.fc2.bias", {d});
    normal("y_embed.table", {cfg.num_classes + 1, d}, 0.02);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string b = block_prefix(l);
      xavier(b + "attn.qkv.weight", d, 3 * d);
      zeros(b + "attn.qkv.bias", {3 * d});
      xavier(b + "attn.proj.weight", d, d);
      zeros(b + "attn.proj.bias", {d});
      xavier(b + "mlp.fc1.weight", d, cfg.mlp_ratio * d);
      zeros(b + "mlp.fc1.bias", {cfg.mlp_ratio * d});
      xavier(b + "mlp.fc2.weight", cfg.mlp_ratio * d, d);
      zeros(b + "mlp.fc2.bias", {d});
      zeros(b + "adaln.weight", {d, 6 * d});
      zeros(b + "adaln.bias", {6 * d});
    }
    zeros("final.adaln.weight", {d, 2 * d});
    zeros("final.adaln.bias", {2 * d});
    zeros("head_x.weight", {d, cfg.x_channels});
    zeros("head_x.bias", {cfg.x_channels});
    zeros("head_z.weight", {d, cfg.z_channels});
    zeros("head_z.bias", {cfg.z_channels});
    return JointDenoiser(cfg, std::move(p));
  }

  const DenoiserConfig& config() const noexcept { return cfg_; }
  const ParamStore& params() const noexcept { return params_; }
  ParamStore& params() noexcept { return params_; }

  // Records the forward pass on `tape`. x_t is [B, L, C_x] (or [L, C_x]
  // for B = 1), z_t likewise; `times` and `labels` hold one entry per
  // sample, label == num_classes selects the null class. `token_positions`
  // optionally relabels the spatial position of each token.
  Outputs forward(Tape& tape, const Tensor& x_t, const Tensor& z_t, std::span<const double> times,
                  std::span<const std::size_t> labels, std::span<const std::size_t> token_positions = {}) const {
    const std::size_t L = cfg_.token_count, d = cfg_.hidden_dim;
    require(x_t.cols() == cfg_.x_channels && z_t.cols() == cfg_.z_channels,
            "denoise: channel mismatch, x " + shape_string(x_t.shape()) + " z " + shape_string(z_t.shape()));
    require(x_t.rows() % L == 0 && x_t.rows() == z_t.rows(), "denoise: token count mismatch");
    const std::size_t batch = x_t.rows() / L;
    require(times.size() == batch && labels.size() == batch, "denoise: need one time and one label per sample");
    require(token_positions.empty() || token_positions.size() == L, "denoise: token_positions must have L entries");
    for (std::size_t lab : labels)
      require(lab <= cfg_.num_classes, "denoise: class label " + std::to_string(lab) + " out of range");

    auto P = [&](const std::string& name) { return tape.parameter(name, params_[name]); };

    // Conditioning vector c = MLP(sin(t)) + y_table[label].
    std::vector<double> tm(batch);
    for (std::size_t b = 0; b < batch; ++b) tm[b] = model_time(cfg_, times[b]);
    Var tfeat = tape.constant(sinusoidal_features(tm, d), "time_features");
    Var temb = tape.linear(tape.silu(tape.linear(tfeat, P("t_embed.fc1.weight"), P("t_embed.fc1.bias"))),
                           P("t_embed.fc2.weight"), P("t_embed.fc2.bias"));
    Var yemb = tape.gather_rows(P("y_embed.table"), std::vector<std::size_t>(labels.begin(), labels.end()));
    Var cond = tape.silu(tape.add(temb, yemb));

    // Token embedding and fusion.
    Var x_in = tape.constant(x_t.reshaped({batch * L, cfg_.x_channels}), "x_t");
    Var z_in = tape.constant(z_t.reshaped({batch * L, cfg_.z_channels}), "z_t");
    Var hx = tape.matmul(x_in, P("embed_x.weight"));
    Var hz = tape.matmul(z_in, P("embed_z.weight"));
    Var pos = tape.constant(position_table(cfg_, token_positions), "positions");
    Var h;
    const std::size_t S = cfg_.sequence_length();
    if (cfg_.fusion == FusionMode::Merged) {
      h = tape.add_tiled(tape.add(hx, hz), pos);
    } else {
      Var modal = tape.gather_rows(P("modality_embed"), modality_ids(cfg_));
      h = tape.add_tiled(tape.add_tiled(tape.concat_groups(hx, hz, L, L), pos), modal);
    }

    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string b = block_prefix(l);
      Var mod = tape.linear(cond, P(b + "adaln.weight"), P(b + "adaln.bias"));
      auto chunk = [&](std::size_t i) { return tape.col_slice(mod, i * d, d); };
      Var a = modulate(tape, tape.layer_norm(h), chunk(0), chunk(1), S);
      Var qkv = tape.linear(a, P(b + "attn.qkv.weight"), P(b + "attn.qkv.bias"));
      Var att = tape.linear(tape.attention(qkv, S, cfg_.heads), P(b + "attn.proj.weight"), P(b + "attn.proj.bias"));
      h = tape.add(h, tape.mul_rows(att, chunk(2), S));
      Var m = modulate(tape, tape.layer_norm(h), chunk(3), chunk(4), S);
      m = tape.linear(tape.gelu(tape.linear(m, P(b + "mlp.fc1.weight"), P(b + "mlp.fc1.bias"))),
                      P(b + "mlp.fc2.weight"), P(b + "mlp.fc2.bias"));
      h = tape.add(h, tape.mul_rows(m, chunk(5), S));
    }

    Var fmod = tape.linear(cond, P("final.adaln.weight"), P("final.adaln.bias"));
    Var o = modulate(tape, tape.layer_norm(h), tape.col_slice(fmod, 0, d), tape.col_slice(fmod, d, d), S);
    Var ox = o, oz = o;
    if (cfg_.fusion == FusionMode::Separate) {
      ox = tape.take_groups(o, S, 0, L);
      oz = tape.take_groups(o, S, L, L);
    }
    return {tape.linear(ox, P("head_x.weight"), P("head_x.bias")),
            tape.linear(oz, P("head_z.weight"), P("head_z.bias"))};
  }

  // Inference entry point. Absent labels select the null class.
  DenoiserPrediction denoise(const Tensor& x_t, const Tensor& z_t, std::span<const double> times,
                             std::optional<std::span<const std::size_t>> labels = std::nullopt,
                             std::span<const std::size_t> token_positions = {}) const {
    const std::size_t batch = x_t.rows() / cfg_.token_count;
    std::vector<std::size_t> lab(batch, cfg_.null_label());
    if (labels) lab.assign(labels->begin(), labels->end());
    Tape tape(false);
    Outputs out = forward(tape, x_t, z_t, times, lab, token_positions);
    Shape sx = x_t.shape(), sz = z_t.shape();
    return {tape.value(out.x).reshaped(sx), tape.value(out.z).reshaped(sz)};
  }

  DenoiserPrediction denoise(const Tensor& x_t, const Tensor& z_t, double t,
                             std::optional<std::size_t> label = std::nullopt) const {
    const std::size_t batch = x_t.rows() / cfg_.token_count;
    std::vector<double> times(batch, t);
    std::vector<std::size_t> lab(batch, label.value_or(cfg_.null_label()));
    return denoise(x_t, z_t, times, std::span<const std::size_t>(lab));
  }

  static std::string block_prefix(std::size_t l) { return "blocks." + std::to_string(l) + "."; }

 private:
  static Var modulate(Tape& tape, Var x, Var shift, Var scale, std::size_t group) {
    return tape.add_rows(tape.mul_rows(x, tape.add_scalar(scale, 1.0), group), shift, group);
  }

  DenoiserConfig cfg_;
  ParamStore params_;
};

// h = x W_x + z W_z, one row per token.
inline Tensor embed_merged(const Tensor& x_t, const Tensor& z_t, const Tensor& w_x, const Tensor& w_z) {
  require(w_x.rank() == 2 && w_z.rank() == 2 && x_t.cols() == w_x.dim(0) && z_t.cols() == w_z.dim(0) &&
              w_x.dim(1) == w_z.dim(1) && x_t.rows() == z_t.rows(),
          "embed_merged: shape mismatch");
  Tape tape(false);
  Var h = tape.add(tape.matmul(tape.constant(x_t), tape.constant(w_x)),
                   tape.matmul(tape.constant(z_t), tape.constant(w_z)));
  return tape.value(h);
}

// [x W_x ; z W_z] per sample, x tokens first. Inputs are [L, C] or [B, L, C].
inline Tensor embed_separate(const Tensor& x_t, const Tensor& z_t, const Tensor& w_x, const Tensor& w_z) {
  require(w_x.rank() == 2 && w_z.rank() == 2 && x_t.cols() == w_x.dim(0) && z_t.cols() == w_z.dim(0) &&
              w_x.dim(1) == w_z.dim(1) && x_t.rows() == z_t.rows() && x_t.rank() >= 2,
          "embed_separate: shape mismatch");
  const std::size_t L = x_t.dim(x_t.rank() - 2);
  Tape tape(false);
  Var h = tape.concat_groups(tape.matmul(tape.constant(x_t), tape.constant(w_x)),
                             tape.matmul(tape.constant(z_t), tape.constant(w_z)), L, L);
  return tape.value(h);
}

}  // namespace redi
