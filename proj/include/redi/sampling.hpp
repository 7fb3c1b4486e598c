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
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "redi/denoiser.hpp"
#include "redi/errors.hpp"
#include "redi/rng.hpp"
#include "redi/schedule.hpp"
#include "redi/training.hpp"

namespace redi {

enum class CfgMode { Off, VaeOnly, Both };
enum class GuidanceOrder { CfgThenRg, RgThenCfg };

struct GuidanceConfig {
  double cfg_weight = 2.4;
  CfgMode cfg_mode = CfgMode::VaeOnly;
  double rg_weight = 1.5;
  bool rg_enabled = true;
  std::size_t steps = 250;
  double diffusion_scale = 1.0;  // Euler-Maruyama only
  GuidanceOrder order = GuidanceOrder::CfgThenRg;

  void validate() const {
    require(steps >= 1, "GuidanceConfig: steps must be >= 1");
    require(std::isfinite(cfg_weight) && std::isfinite(rg_weight) && std::isfinite(diffusion_scale) &&
                diffusion_scale >= 0.0,
            "GuidanceConfig: weights must be finite");
  }
};

enum class LabelMode { Fixed, Random, Unconditional };

struct SampleRequest {
  std::size_t count = 1;
  LabelMode label_mode = LabelMode::Random;
  std::size_t class_label = 0;
  GuidanceConfig guidance;
  std::uint64_t seed = 0;
  std::optional<double> trained_p_drop;  // enables the out-of-distribution warning for RG
  bool semantic_input = true;            // false for latent-only models: z is always fed as zeros
};

// x: null-z prediction + w_r (joint - null-z); z keeps the joint prediction.
inline DenoiserPrediction compose_rg(const DenoiserPrediction& pred_joint, const DenoiserPrediction& pred_null_z,
                                     double w_r) {
  pred_joint.out_x.check_same(pred_null_z.out_x, "compose_rg");
  Tensor x(pred_joint.out_x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = pred_null_z.out_x[i] + w_r * (pred_joint.out_x[i] - pred_null_z.out_x[i]);
  return {std::move(x), pred_joint.out_z};
}

inline DenoiserPrediction compose_cfg(const DenoiserPrediction& pred_cond, const DenoiserPrediction& pred_uncond,
                                      double w, CfgMode mode) {
  if (mode == CfgMode::Off) return pred_cond;
  auto extrapolate = [w](const Tensor& c, const Tensor& u) {
    c.check_same(u, "compose_cfg");
    Tensor out(c.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = u[i] + w * (c[i] - u[i]);
    return out;
  };
  DenoiserPrediction out;
  out.out_x = extrapolate(pred_cond.out_x, pred_uncond.out_x);
  out.out_z = mode == CfgMode::Both ? extrapolate(pred_cond.out_z, pred_uncond.out_z) : pred_cond.out_z;
  return out;
}

namespace detail {

// Adds `scale` * N(0, 1) to a batched tensor, chain b drawing from rngs[b].
inline void add_chain_noise(Tensor& t, double scale, std::span<Rng> rngs) {
  const std::size_t per = t.size() / rngs.size();
  for (std::size_t b = 0; b < rngs.size(); ++b)
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) t[i] += scale * rngs[b].normal();
}

}  // namespace detail

// One ancestral step t -> t-1 with the fixed posterior variance, applied
// to both streams with the same coefficients. state.t indexes `sched`;
// chain b of a batched state draws its noise from rngs[b].
inline JointState ddpm_ancestral_step(const JointState& state, const DenoiserPrediction& pred,
                                      const DdpmSchedule& sched, std::span<Rng> rngs) {
  require(state.t >= 0.0, "ddpm_ancestral_step: t must be >= 0");
  const auto t = std::size_t(state.t);
  require(t < sched.steps(), "ddpm_ancestral_step: t out of range");
  require(!rngs.empty() && state.x.size() % rngs.size() == 0 && state.z.size() % rngs.size() == 0,
          "ddpm_ancestral_step: need one RNG per chain");
  const double ab = sched.alpha_bar[t];
  const double ab_prev = t == 0 ? 1.0 : sched.alpha_bar[t - 1];
  const double beta = sched.beta[t];
  const double c_x0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
  const double c_xt = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
  auto mean = [&](const Tensor& xt, const Tensor& eps) {
    xt.check_same(eps, "ddpm_ancestral_step");
    Tensor out(xt.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double x0 = (xt[i] - std::sqrt(1.0 - ab) * eps[i]) / std::sqrt(ab);
      out[i] = c_x0 * x0 + c_xt * xt[i];
    }
    return out;
  };
  JointState next{mean(state.x, pred.out_x), mean(state.z, pred.out_z), double(t) - 1.0};
  if (t > 0) {
    const double sd = std::sqrt(sched.posterior_variance(t));
    detail::add_chain_noise(next.x, sd, rngs);
    detail::add_chain_noise(next.z, sd, rngs);
  }
  return next;
}

inline JointState ddpm_ancestral_step(const JointState& state, const DenoiserPrediction& pred,
                                      const DdpmSchedule& sched, Rng& rng) {
  return ddpm_ancestral_step(state, pred, sched, std::span<Rng>(&rng, 1));
}

// Reverse-time Euler-Maruyama step t -> t - dt. The drift is
// v - w/2 * score with w(t) = diffusion_scale * sigma(t); the score comes
// from the velocity through the interpolant's linear relations. A zero
// scale gives the probability-flow Euler step.
inline JointState euler_maruyama_step(const JointState& state, const DenoiserPrediction& pred,
                                      const Interpolant& interp, double dt, std::span<Rng> rngs,
                                      double diffusion_scale) {
  require(dt > 0.0, "euler_maruyama_step: dt must be > 0");
  require(state.t - dt >= -1e-12, "euler_maruyama_step: step would cross t = 0");
  require(!rngs.empty() && state.x.size() % rngs.size() == 0 && state.z.size() % rngs.size() == 0,
          "euler_maruyama_step: need one RNG per chain");
  const double t = state.t;
  const double a = interp.alpha(t), s = interp.sigma(t), ad = interp.alpha_dot(t), sd = interp.sigma_dot(t);
  const double det = a * sd - ad * s;
  const double t_next = std::max(t - dt, 0.0);
  const bool last = t_next <= 0.0;
  auto advance = [&](const Tensor& x, const Tensor& v) {
    x.check_same(v, "euler_maruyama_step");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      // sigma * score = -E[eps | x_t]
      const double eps_hat = (a * v[i] - ad * x[i]) / det;
      out[i] = x[i] - dt * (v[i] + 0.5 * diffusion_scale * eps_hat);
    }
    return out;
  };
  JointState next{advance(state.x, pred.out_x), advance(state.z, pred.out_z), t_next};
  if (!last && diffusion_scale > 0.0) {
    const double sdv = std::sqrt(diffusion_scale * s * dt);
    detail::add_chain_noise(next.x, sdv, rngs);
    detail::add_chain_noise(next.z, sdv, rngs);
  }
  return next;
}

inline JointState euler_maruyama_step(const JointState& state, const DenoiserPrediction& pred,
                                      const Interpolant& interp, double dt, Rng& rng, double diffusion_scale) {
  return euler_maruyama_step(state, pred, interp, dt, std::span<Rng>(&rng, 1), diffusion_scale);
}

struct SampleResult {
  Tensor x;  // [N, L, C_x]
  Tensor z;  // [N, L, C'_z]
  std::vector<std::size_t> labels;
  std::vector<std::string> warnings;
};

// Sampler parallelism: REDI_THREADS if set, otherwise all cores.
inline std::size_t sampler_threads() {
  if (const char* env = std::getenv("REDI_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return std::size_t(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Chains are processed in fixed-size chunks; chain c always draws from
// Rng(seed).fork(c), so output does not depend on the thread count.
inline constexpr std::size_t kSamplerChunk = 64;

inline SampleResult sample(const JointDenoiser& model, const SampleRequest& req, const NoiseProcess& process) {
  const DenoiserConfig& mc = model.config();
  const GuidanceConfig& g = req.guidance;
  g.validate();
  require(req.count >= 1, "sample: count must be >= 1");
  require(mc.prediction == process.prediction(), "sample: process does not match the model's prediction kind");
  require(req.label_mode != LabelMode::Fixed || req.class_label < mc.num_classes, "sample: class label out of range");

  SampleResult res;
  const bool rg = g.rg_enabled && req.semantic_input;
  bool cfg_on = g.cfg_mode != CfgMode::Off;
  if (rg && req.trained_p_drop && *req.trained_p_drop == 0.0)
    res.warnings.push_back("representation guidance requested but the model was trained with p_drop = 0; "
                           "the null-semantic input is out of distribution");
  if (cfg_on && (req.label_mode == LabelMode::Unconditional || mc.num_classes == 1)) {
    res.warnings.push_back("classifier-free guidance ignored for unconditional sampling");
    cfg_on = false;
  }

  const std::size_t L = mc.token_count;
  const std::size_t per_x = L * mc.x_channels, per_z = L * mc.z_channels;
  res.x = Tensor({req.count, L, mc.x_channels});
  res.z = Tensor({req.count, L, mc.z_channels});
  res.labels.resize(req.count);

  const DdpmSchedule sched =
      process.objective == Objective::DdpmNoise ? respace(process.ddpm, std::min(g.steps, process.ddpm.steps()))
                                                : DdpmSchedule{};
  const Rng root(req.seed);

  auto run_chunk = [&](std::size_t begin, std::size_t end) {
    const std::size_t n = end - begin;
    std::vector<Rng> rngs;
    std::vector<std::size_t> labels(n), null_labels(n, mc.null_label());
    for (std::size_t i = 0; i < n; ++i) {
      rngs.push_back(root.fork(begin + i));
      Rng lr = rngs.back().fork(0);
      switch (req.label_mode) {
        case LabelMode::Fixed: labels[i] = req.class_label; break;
        case LabelMode::Random: labels[i] = lr.uniform_int(mc.num_classes); break;
        case LabelMode::Unconditional: labels[i] = mc.num_classes == 1 ? 0 : mc.null_label(); break;
      }
    }
    JointState state{Tensor({n, L, mc.x_channels}), Tensor({n, L, mc.z_channels}), 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < per_x; ++j) state.x[i * per_x + j] = rngs[i].normal();
      for (std::size_t j = 0; j < per_z; ++j) state.z[i * per_z + j] = rngs[i].normal();
    }

    auto predict = [&](double model_t) {
      std::vector<double> times(n, model_t);
      auto call = [&](const Tensor& z_in, const std::vector<std::size_t>& lab) {
        return model.denoise(state.x, z_in, times, std::span<const std::size_t>(lab));
      };
      const Tensor z_in = req.semantic_input ? state.z : null_semantic(state.z);
      DenoiserPrediction cond = call(z_in, labels);
      std::optional<DenoiserPrediction> uncond, null_z;
      if (cfg_on) uncond = call(z_in, null_labels);
      if (rg) null_z = call(null_semantic(state.z), labels);
      if (g.order == GuidanceOrder::CfgThenRg) {
        DenoiserPrediction p = cfg_on ? compose_cfg(cond, *uncond, g.cfg_weight, g.cfg_mode) : cond;
        return rg ? compose_rg(p, *null_z, g.rg_weight) : p;
      }
      DenoiserPrediction p = rg ? compose_rg(cond, *null_z, g.rg_weight) : cond;
      return cfg_on ? compose_cfg(p, *uncond, g.cfg_weight, g.cfg_mode) : p;
    };

    if (process.objective == Objective::DdpmNoise) {
      for (std::size_t k = sched.steps(); k-- > 0;) {
        state.t = double(k);
        DenoiserPrediction p = predict(double(sched.timesteps[k]));
        state = ddpm_ancestral_step(state, p, sched, rngs);
      }
    } else {
      const double dt = 1.0 / double(g.steps);
      state.t = 1.0;
      for (std::size_t k = g.steps; k > 0; --k) {
        state.t = double(k) * dt;
        DenoiserPrediction p = predict(state.t);
        state = euler_maruyama_step(state, p, process.interp, dt, rngs, g.diffusion_scale);
      }
    }
    std::copy_n(state.x.data(), n * per_x, res.x.data() + begin * per_x);
    std::copy_n(state.z.data(), n * per_z, res.z.data() + begin * per_z);
    std::copy(labels.begin(), labels.end(), res.labels.begin() + std::ptrdiff_t(begin));
  };

  const std::size_t chunks = (req.count + kSamplerChunk - 1) / kSamplerChunk;
  const std::size_t workers = std::min(sampler_threads(), chunks);
  std::atomic<std::size_t> next{0};
  std::mutex failure_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    try {
      for (std::size_t c = next++; c < chunks; c = next++)
        run_chunk(c * kSamplerChunk, std::min(req.count, (c + 1) * kSamplerChunk));
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = chunks;
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  if (!res.x.all_finite() || !res.z.all_finite()) throw NumericFailure("sample: non-finite values in generated samples");
  return res;
}

}  // namespace redi
