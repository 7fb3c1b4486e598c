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
#include <cstdint>
#include <string>
#include <vector>

#include "redi/config.hpp"
#include "redi/denoiser.hpp"
#include "redi/io.hpp"
#include "redi/sampling.hpp"
#include "redi/semantic.hpp"
#include "redi/toyworld.hpp"
#include "redi/training.hpp"

// Wiring from a RunConfig to data, model, training and sampling. Every
// random stream used by a run is forked here from `RunConfig::seed`.

namespace redi {

namespace stream {
inline constexpr std::uint64_t kPcaFit = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kTrain = 3;
inline constexpr std::uint64_t kEvalSample = 4;
}  // namespace stream

struct PcaFit {
  PcaProjector projector;
  std::vector<double> spectrum;  // eigenvalues of the full covariance, descending
};

inline PcaFit fit_projector(const RunConfig& cfg) {
  const ToySpec spec = ToySpec::create(cfg.toy);
  Rng rng = Rng(cfg.seed).fork(stream::kPcaFit);
  const Tensor samples = semantic_fit_samples(spec, cfg.pca_samples, rng);
  return {pca_fit(samples, cfg.pca_rank), covariance_spectrum(samples)};
}

inline ToySpec make_spec(const RunConfig& cfg, const PcaProjector& projector) {
  require(projector.rank() == cfg.pca_rank && projector.full_dim() == cfg.toy.z_full_channels,
          "make_spec: projector does not match the configured rank");
  ToySpec spec = ToySpec::create(cfg.toy);
  spec.pca = projector;
  return spec;
}

inline TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t = cfg.train;
  t.seed = Rng(cfg.seed).fork(stream::kTrain).next_u64();
  return t;
}

inline JointDenoiser init_model(const RunConfig& cfg) {
  return JointDenoiser::create(cfg.denoiser(), Rng(cfg.seed).fork(stream::kInit));
}

inline SampleRequest sample_request(const RunConfig& cfg, std::size_t count, std::uint64_t seed) {
  SampleRequest req;
  req.count = count;
  req.label_mode = cfg.toy.num_classes == 1 ? LabelMode::Unconditional : LabelMode::Random;
  req.guidance = cfg.guidance;
  req.seed = seed;
  req.trained_p_drop = cfg.train.p_drop;
  req.semantic_input = cfg.train.semantic_input;
  return req;
}

// Small in-training evaluation: `eval_samples` chains of `eval_steps`.
inline MetricReport periodic_eval(const RunConfig& cfg, const ToySpec& spec, const JointDenoiser& model) {
  SampleRequest req = sample_request(cfg, cfg.eval_samples, Rng(cfg.seed).fork(stream::kEvalSample).next_u64());
  req.guidance.steps = cfg.eval_steps;
  const SampleResult s = sample(model, req, cfg.process());
  return evaluate_samples(s.x, s.z, spec, cfg.eval_options());
}

inline Checkpoint make_checkpoint(const RunConfig& cfg, const JointDenoiser& model, const PcaProjector& projector) {
  Checkpoint ck;
  ck.config = cfg;
  ck.params = model.params();
  ck.projector = projector;
  ck.step = model.params().step();
  return ck;
}

inline JointDenoiser model_from_checkpoint(const Checkpoint& ck) {
  JointDenoiser model(ck.config.denoiser(), ck.params);
  return model;
}

// Same architecture with the semantic stream switched off: zero z input,
// no z loss, no representation guidance.
inline RunConfig latent_only(RunConfig cfg) {
  cfg.train.lambda_z = 0.0;
  cfg.train.semantic_input = false;
  cfg.guidance.rg_enabled = false;
  return cfg;
}

struct TrainedRun {
  RunConfig cfg;
  PcaProjector projector;
  JointDenoiser model;
  std::vector<StepResult> losses;
  double seconds_per_step = 0.0;
};

// Fits the projector, trains from scratch in memory and times the steps.
inline TrainedRun train_in_memory(const RunConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  TrainedRun run{cfg, fit_projector(cfg).projector, init_model(cfg), {}, 0.0};
  const ToySpec spec = make_spec(cfg, run.projector);
  const auto start = std::chrono::steady_clock::now();
  run.losses = train_loop(spec, run.model, train_config(cfg), cfg.process(), hooks);
  const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
  if (!run.losses.empty()) run.seconds_per_step = took.count() / double(run.losses.size());
  return run;
}

inline MetricReport sample_and_score(const TrainedRun& run, const GuidanceConfig& guidance, std::size_t count,
                                     std::uint64_t seed) {
  SampleRequest req = sample_request(run.cfg, count, seed);
  req.guidance = guidance;
  const SampleResult s = sample(run.model, req, run.cfg.process());
  return evaluate_samples(s.x, s.z, make_spec(run.cfg, run.projector), run.cfg.eval_options());
}

inline std::string config_hash(const RunConfig& cfg) { return hex64(fnv1a(serialize_config(cfg))); }

}  // namespace redi
