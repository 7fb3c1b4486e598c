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

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "redi/autodiff.hpp"
#include "redi/denoiser.hpp"
#include "redi/errors.hpp"
#include "redi/optim.hpp"
#include "redi/rng.hpp"
#include "redi/schedule.hpp"
#include "redi/toyworld.hpp"

namespace redi {

enum class Objective { DdpmNoise, InterpolantVelocity };

struct NoiseProcess {
  Objective objective = Objective::DdpmNoise;
  DdpmSchedule ddpm = build_linear_ddpm(1000, 1e-4, 2e-2);
  Interpolant interp = Interpolant::linear();

  PredictionKind prediction() const {
    return objective == Objective::DdpmNoise ? PredictionKind::Noise : PredictionKind::Velocity;
  }
};

struct TrainConfig {
  double lambda_z = 1.0;
  double p_drop = 0.2;
  double p_class_drop = 0.1;
  bool semantic_input = true;  // false zeroes z_t everywhere (latent-only baseline)
  std::size_t batch_size = 256;
  std::size_t total_steps = 2000;
  Objective objective = Objective::DdpmNoise;
  AdamWConfig optimizer;
  std::uint64_t seed = 0;

  void validate() const {
    require(lambda_z >= 0.0, "TrainConfig: lambda_z must be >= 0");
    require(p_drop >= 0.0 && p_drop <= 1.0 && p_class_drop >= 0.0 && p_class_drop <= 1.0,
            "TrainConfig: probabilities must lie in [0, 1]");
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  }
};

struct BatchRecord {
  Tensor x0;  // [B, L, C_x]
  Tensor z0;  // [B, L, C'_z]
  std::vector<std::size_t> labels;
  std::vector<bool> drop_mask;        // semantic stream dropped
  std::vector<bool> class_drop_mask;  // label replaced by the null class
};

// Mean squared error of each stream, x term plus lambda_z times z term.
// A dropped sample contributes no z term.
inline double joint_loss_ddpm(const DenoiserPrediction& pred, const Tensor& eps_x, const Tensor& eps_z,
                              double lambda_z, bool dropped) {
  pred.out_x.check_same(eps_x, "joint_loss (x)");
  pred.out_z.check_same(eps_z, "joint_loss (z)");
  auto mse = [](const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / double(a.size());
  };
  const double lz = dropped ? 0.0 : lambda_z;
  const double x_term = mse(pred.out_x, eps_x);
  return lz == 0.0 ? x_term : x_term + lz * mse(pred.out_z, eps_z);
}

inline double joint_loss_velocity(const DenoiserPrediction& pred, const Tensor& target_x, const Tensor& target_z,
                                  double lambda_z, bool dropped) {
  return joint_loss_ddpm(pred, target_x, target_z, lambda_z, dropped);
}

struct LossTerms {
  Var total;
  double x = 0.0;  // batch mean of the x term
  double z = 0.0;  // mean z term over samples that kept their semantic stream
};

// Batched joint objective on the tape: mean over samples of the per-sample
// loss defined by joint_loss_ddpm.
inline LossTerms joint_loss_graph(Tape& tape, const JointDenoiser::Outputs& out, const Tensor& target_x,
                                  const Tensor& target_z, double lambda_z, const std::vector<bool>& dropped) {
  const std::size_t batch = dropped.size();
  const std::size_t rows = target_x.rows();
  require(batch > 0 && rows % batch == 0, "joint_loss_graph: batch shape mismatch");
  const std::size_t tokens = rows / batch;
  const double nx = double(batch * tokens * target_x.cols());
  const double nz = double(tokens * target_z.cols());
  std::vector<double> wx(rows, 1.0 / nx), wz(rows, 0.0);
  std::size_t kept = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (dropped[b] || lambda_z == 0.0) continue;
    ++kept;
    for (std::size_t r = 0; r < tokens; ++r) wz[b * tokens + r] = lambda_z / (nz * double(batch));
  }
  LossTerms terms;
  Var lx = tape.weighted_sq_error(out.x, target_x, wx);
  terms.x = tape.value(lx)[0];
  if (kept == 0) {
    terms.total = lx;
    return terms;
  }
  Var lz = tape.weighted_sq_error(out.z, target_z, wz);
  terms.z = tape.value(lz)[0] * double(batch) / (double(kept) * lambda_z);
  terms.total = tape.add_scalars(lx, lz);
  return terms;
}

// Draws the realised training batch for one step.
inline BatchRecord make_batch(const ToySpec& spec, const TrainConfig& cfg, Rng rng) {
  Rng data = rng.fork(0), masks = rng.fork(1);
  PairBatch pairs = generate_pairs(spec, cfg.batch_size, data);
  BatchRecord b{std::move(pairs.x0), std::move(pairs.z0), std::move(pairs.labels), {}, {}};
  b.drop_mask.resize(cfg.batch_size);
  b.class_drop_mask.resize(cfg.batch_size);
  for (std::size_t i = 0; i < cfg.batch_size; ++i) {
    b.drop_mask[i] = masks.bernoulli(cfg.p_drop);
    b.class_drop_mask[i] = masks.bernoulli(cfg.p_class_drop);
  }
  return b;
}

struct StepResult {
  double loss = 0.0;
  double loss_x = 0.0;
  double loss_z = 0.0;
};

// Builds the noisy inputs and regression targets for a batch.
struct CorruptedBatch {
  Tensor x_t, z_t, target_x, target_z;
  std::vector<double> times;
  std::vector<std::size_t> labels;
};

inline CorruptedBatch corrupt_batch(const BatchRecord& batch, const NoiseProcess& process, const TrainConfig& cfg,
                                    std::size_t null_label, Rng rng) {
  const std::size_t B = batch.labels.size();
  const std::size_t per_x = batch.x0.size() / B, per_z = batch.z0.size() / B;
  Rng trng = rng.fork(0), nrng = rng.fork(1);
  CorruptedBatch c;
  const Tensor eps_x = nrng.normal(batch.x0.shape());
  const Tensor eps_z = nrng.normal(batch.z0.shape());
  c.x_t = Tensor(batch.x0.shape());
  c.z_t = Tensor(batch.z0.shape());
  c.target_x = Tensor(batch.x0.shape());
  c.target_z = Tensor(batch.z0.shape());
  c.times.resize(B);
  c.labels.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    double a, s, ad = 0.0, sd = 0.0;
    if (process.objective == Objective::DdpmNoise) {
      const std::size_t t = trng.uniform_int(process.ddpm.steps());
      c.times[b] = double(t);
      a = std::sqrt(process.ddpm.alpha_bar[t]);
      s = std::sqrt(1.0 - process.ddpm.alpha_bar[t]);
    } else {
      const double t = trng.uniform();
      c.times[b] = t;
      a = process.interp.alpha(t);
      s = process.interp.sigma(t);
      ad = process.interp.alpha_dot(t);
      sd = process.interp.sigma_dot(t);
    }
    const bool zero_z = !cfg.semantic_input || batch.drop_mask[b];
    for (std::size_t i = b * per_x; i < (b + 1) * per_x; ++i) {
      c.x_t[i] = a * batch.x0[i] + s * eps_x[i];
      c.target_x[i] = process.objective == Objective::DdpmNoise ? eps_x[i] : ad * batch.x0[i] + sd * eps_x[i];
    }
    for (std::size_t i = b * per_z; i < (b + 1) * per_z; ++i) {
      c.z_t[i] = zero_z ? 0.0 : a * batch.z0[i] + s * eps_z[i];
      c.target_z[i] = process.objective == Objective::DdpmNoise ? eps_z[i] : ad * batch.z0[i] + sd * eps_z[i];
    }
    c.labels[b] = batch.class_drop_mask[b] ? null_label : batch.labels[b];
  }
  return c;
}

// One optimisation step. The model's parameters and optimizer state are
// updated in place.
inline StepResult train_step(JointDenoiser& model, const BatchRecord& batch, const NoiseProcess& process,
                             const TrainConfig& cfg, Rng rng, std::size_t step_index = 0) {
  require(model.config().prediction == process.prediction(), "train_step: objective does not match model prediction kind");
  const CorruptedBatch c = corrupt_batch(batch, process, cfg, model.config().null_label(), rng);
  Tape tape;
  auto out = model.forward(tape, c.x_t, c.z_t, c.times, c.labels);
  std::vector<bool> dropped = batch.drop_mask;
  if (!cfg.semantic_input)
    for (std::size_t i = 0; i < dropped.size(); ++i) dropped[i] = true;
  LossTerms terms = joint_loss_graph(tape, out, c.target_x, c.target_z, cfg.lambda_z, dropped);
  const double loss = tape.value(terms.total)[0];
  if (!std::isfinite(loss))
    throw NumericFailure("train_step: non-finite loss at step " + std::to_string(step_index));
  std::map<std::string, Tensor> grads;
  try {
    grads = tape.backprop(terms.total);
  } catch (const NumericFailure& e) {
    throw NumericFailure("train_step: step " + std::to_string(step_index) + ": " + e.what());
  }
  adamw_step(model.params(), grads, cfg.optimizer);
  return {loss, terms.x, terms.z};
}

// RNG streams of a training run, keyed by step index so that a resumed run
// replays exactly.
inline Rng step_rng(std::uint64_t seed, std::size_t step) { return Rng(seed).fork(0x7472, step); }

struct TrainHooks {
  // Called after each step with the 1-based step count and its result.
  std::function<void(std::size_t, const StepResult&, const JointDenoiser&)> on_step;
  std::function<void(std::size_t, const JointDenoiser&)> on_checkpoint;
  std::size_t checkpoint_every = 0;
};

// Runs steps (model.params().step(), total_steps]; returns the per-step
// loss series of this call.
inline std::vector<StepResult> train_loop(const ToySpec& spec, JointDenoiser& model, const TrainConfig& cfg,
                                          const NoiseProcess& process, const TrainHooks& hooks = {}) {
  cfg.validate();
  std::vector<StepResult> series;
  for (std::size_t step = model.params().step(); step < cfg.total_steps; ++step) {
    Rng rng = step_rng(cfg.seed, step);
    const BatchRecord batch = make_batch(spec, cfg, rng.fork(0));
    const StepResult r = train_step(model, batch, process, cfg, rng.fork(1), step + 1);
    series.push_back(r);
    if (hooks.on_step) hooks.on_step(step + 1, r, model);
    if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && (step + 1) % hooks.checkpoint_every == 0)
      hooks.on_checkpoint(step + 1, model);
  }
  return series;
}

}  // namespace redi
