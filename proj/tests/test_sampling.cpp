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

#include <gtest/gtest.h>

#include <cstdlib>
#include <limits>

#include "analytic.hpp"
#include "fixtures.hpp"
#include "redi/sampling.hpp"

namespace redi {
namespace {

using testing::randomize;

DenoiserPrediction random_prediction(Rng& rng) { return {rng.normal({3, 4}), rng.normal({3, 2})}; }

TEST(ComposeRg, TelescopingIdentities) {
  Rng rng(1);
  const auto joint = random_prediction(rng), null_z = random_prediction(rng);
  const auto one = compose_rg(joint, null_z, 1.0), zero = compose_rg(joint, null_z, 0.0);
  for (std::size_t i = 0; i < joint.out_x.size(); ++i) {
    EXPECT_NEAR(one.out_x[i], joint.out_x[i], 1e-12);
    EXPECT_NEAR(zero.out_x[i], null_z.out_x[i], 1e-12);
  }
  EXPECT_EQ(one.out_z, joint.out_z);
  EXPECT_EQ(compose_rg(joint, null_z, 1.5).out_z, joint.out_z);
}

TEST(ComposeRg, ScalarArithmetic) {
  const Tensor s({1, 1});
  const auto out = compose_rg({Tensor({1, 1}, {3.0}), s}, {Tensor({1, 1}, {1.0}), s}, 2.0);
  EXPECT_EQ(out.out_x[0], 5.0);
}

TEST(ComposeCfg, TelescopingAndModes) {
  Rng rng(2);
  const auto cond = random_prediction(rng), uncond = random_prediction(rng);
  for (CfgMode mode : {CfgMode::Off, CfgMode::VaeOnly, CfgMode::Both}) {
    const auto one = compose_cfg(cond, uncond, 1.0, mode);
    for (std::size_t i = 0; i < cond.out_x.size(); ++i) EXPECT_NEAR(one.out_x[i], cond.out_x[i], 1e-12);
    for (std::size_t i = 0; i < cond.out_z.size(); ++i) EXPECT_NEAR(one.out_z[i], cond.out_z[i], 1e-12);
  }
  EXPECT_EQ(compose_cfg(cond, uncond, 2.4, CfgMode::VaeOnly).out_z, cond.out_z);
  const auto off = compose_cfg(cond, uncond, 2.4, CfgMode::Off);
  EXPECT_EQ(off.out_x, cond.out_x);
  EXPECT_EQ(off.out_z, cond.out_z);
  const auto both = compose_cfg(cond, uncond, 2.4, CfgMode::Both);
  EXPECT_NEAR(both.out_z[0], uncond.out_z[0] + 2.4 * (cond.out_z[0] - uncond.out_z[0]), 1e-12);
}

TEST(Compose, AffineInWeight) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_prediction(rng), b = random_prediction(rng);
    const double w = rng.uniform(-3.0, 5.0);
    const auto r0 = compose_rg(a, b, 0.0), r1 = compose_rg(a, b, 1.0), rw = compose_rg(a, b, w);
    const auto c0 = compose_cfg(a, b, 0.0, CfgMode::Both), c1 = compose_cfg(a, b, 1.0, CfgMode::Both),
               cw = compose_cfg(a, b, w, CfgMode::Both);
    for (std::size_t i = 0; i < a.out_x.size(); ++i) {
      EXPECT_NEAR(rw.out_x[i], r0.out_x[i] + w * (r1.out_x[i] - r0.out_x[i]), 1e-12);
      EXPECT_NEAR(cw.out_x[i], c0.out_x[i] + w * (c1.out_x[i] - c0.out_x[i]), 1e-12);
    }
    for (std::size_t i = 0; i < a.out_z.size(); ++i)
      EXPECT_NEAR(cw.out_z[i], c0.out_z[i] + w * (c1.out_z[i] - c0.out_z[i]), 1e-12);
  }
}

TEST(Compose, ShapeMismatchIsContractViolation) {
  Rng rng(4);
  const auto a = random_prediction(rng);
  const DenoiserPrediction b{rng.normal({2, 4}), rng.normal({3, 2})};
  EXPECT_THROW(compose_rg(a, b, 1.5), ContractViolation);
  EXPECT_THROW(compose_cfg(a, b, 2.0, CfgMode::VaeOnly), ContractViolation);
}

TEST(DdpmStep, FinalStepIsPosteriorMean) {
  const auto sched = build_linear_ddpm(1000, 1e-4, 2e-2);
  Rng rng(5);
  const JointState st{rng.normal({2, 3}), rng.normal({2, 2}), 0.0};
  const DenoiserPrediction p{rng.normal({2, 3}), rng.normal({2, 2})};
  Rng r1(6), r2(7);
  const auto a = ddpm_ancestral_step(st, p, sched, r1), b = ddpm_ancestral_step(st, p, sched, r2);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.z, b.z);
  for (std::size_t i = 0; i < st.x.size(); ++i)
    EXPECT_NEAR(a.x[i], (st.x[i] - std::sqrt(1 - sched.alpha_bar[0]) * p.out_x[i]) / std::sqrt(sched.alpha_bar[0]),
                1e-12);
}

TEST(DdpmStep, NegativeTimeIsContractViolation) {
  const auto sched = build_linear_ddpm(10, 1e-4, 2e-2);
  Rng rng(8);
  const JointState st{Tensor({1, 1}), Tensor({1, 1}), -1.0};
  EXPECT_THROW(ddpm_ancestral_step(st, {Tensor({1, 1}), Tensor({1, 1})}, sched, rng), ContractViolation);
}

TEST(DdpmStep, TrueNoiseRecoversDeltaTarget) {
  const auto sched = respace(build_linear_ddpm(1000, 1e-4, 2e-2), 250);
  Rng rng(9);
  const Tensor x0 = rng.normal({4, 3}), z0 = rng.normal({4, 2});
  JointState st{rng.normal({4, 3}), rng.normal({4, 2}), 0.0};
  auto true_eps = [](const Tensor& xt, const Tensor& x0, double ab) {
    Tensor e(xt.shape());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (xt[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1 - ab);
    return e;
  };
  for (std::size_t k = sched.steps(); k-- > 0;) {
    st.t = double(k);
    const double ab = sched.alpha_bar[k];
    st = ddpm_ancestral_step(st, {true_eps(st.x, x0, ab), true_eps(st.z, z0, ab)}, sched, rng);
  }
  EXPECT_LE(max_abs_diff(st.x, x0), 1e-6);
  EXPECT_LE(max_abs_diff(st.z, z0), 1e-6);
}

TEST(DdpmStep, AnalyticDenoiserRecoversGaussianMoments) {
  const double m = 1.5, s = 0.5;
  const JointState st = testing::ddpm_gaussian_chains(m, s, 20000, 1000, 10);
  for (const Tensor* t : {&st.x, &st.z}) {
    const auto mo = testing::moments_of(*t);
    EXPECT_LT(std::abs(mo.mean - m), 5 * mo.mean_se());
    EXPECT_LT(std::abs(mo.var - s * s), 5 * mo.var_se());
  }
}

TEST(EulerMaruyama, ExactVelocityOnPointMass) {
  // s -> 0 makes the target a point mass at m.
  const Tensor start = Rng(11).normal({64, 1});
  const JointState st = testing::em_gaussian_chains(0.7, 0.0, start, 200, 0.0, 0);
  for (double v : st.x.values()) EXPECT_NEAR(v, 0.7, 1e-2);
}

TEST(EulerMaruyama, FirstOrderConvergence) {
  const Tensor start = Rng(12).normal({256, 1});
  const double e1 = testing::euler_transport_error(1.0, 0.5, start, 50);
  const double e2 = testing::euler_transport_error(1.0, 0.5, start, 100);
  EXPECT_GE(e1 / e2, 1.7);
  EXPECT_LE(e1 / e2, 2.3);
}

TEST(EulerMaruyama, StochasticSamplerRecoversGaussianMoments) {
  const double m = -0.5, s = 0.8;
  const JointState st = testing::em_gaussian_chains(m, s, Rng(13).normal({20000, 1}), 500, 1.0, 14);
  const auto mo = testing::moments_of(st.x);
  EXPECT_LT(std::abs(mo.mean - m), 5 * mo.mean_se());
  EXPECT_LT(std::abs(mo.var - s * s), 5 * mo.var_se());
}

TEST(EulerMaruyama, FinalStepAddsNoNoise) {
  const auto it = Interpolant::linear();
  Rng rng(15);
  const JointState st{rng.normal({2, 2}), rng.normal({2, 1}), 0.1};
  const DenoiserPrediction p{rng.normal({2, 2}), rng.normal({2, 1})};
  Rng r1(16), r2(17);
  const auto a = euler_maruyama_step(st, p, it, 0.1, r1, 1.0), b = euler_maruyama_step(st, p, it, 0.1, r2, 1.0);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.t, 0.0);
  Rng r3(16), r4(17);
  const JointState mid{st.x, st.z, 0.5};
  EXPECT_NE(euler_maruyama_step(mid, p, it, 0.1, r3, 1.0).x, euler_maruyama_step(mid, p, it, 0.1, r4, 1.0).x);
}

TEST(EulerMaruyama, StepErrors) {
  const auto it = Interpolant::linear();
  Rng rng(18);
  const JointState st{Tensor({1, 1}), Tensor({1, 1}), 0.5};
  const DenoiserPrediction p{Tensor({1, 1}), Tensor({1, 1})};
  EXPECT_THROW(euler_maruyama_step(st, p, it, 0.0, rng, 1.0), ContractViolation);
  EXPECT_THROW(euler_maruyama_step(st, p, it, -0.1, rng, 1.0), ContractViolation);
  EXPECT_THROW(euler_maruyama_step(st, p, it, 0.6, rng, 1.0), ContractViolation);
}

class Sampler : public ::testing::Test {
 protected:
  void SetUp() override {
    model = JointDenoiser::create(testing::tiny_config(), Rng(20));
    randomize(model.params(), Rng(21), 0.1);
    req.count = 5;
    req.seed = 7;
    req.guidance.steps = 20;
  }
  JointDenoiser model = JointDenoiser::create(testing::tiny_config(), Rng(20));
  SampleRequest req;
  NoiseProcess process;
};

TEST_F(Sampler, DeterministicUnderSeed) {
  req.guidance.cfg_mode = CfgMode::Off;
  req.guidance.rg_enabled = false;
  req.count = 2;
  const auto a = sample(model, req, process), b = sample(model, req, process);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.z, b.z);
  EXPECT_EQ(a.labels, b.labels);
  req.seed = 8;
  EXPECT_NE(sample(model, req, process).x, a.x);
}

TEST_F(Sampler, ChainsDependOnlyOnTheirIndex) {
  // Chunk size changes the matmul blocking, so agreement is up to rounding.
  const auto few = sample(model, req, process);
  req.count = 70;
  const auto many = sample(model, req, process);
  for (std::size_t i = 0; i < few.x.size(); ++i) EXPECT_NEAR(few.x[i], many.x[i], 1e-9 * (1 + std::abs(few.x[i])));
  for (std::size_t i = 0; i < few.z.size(); ++i) EXPECT_NEAR(few.z[i], many.z[i], 1e-9 * (1 + std::abs(few.z[i])));
}

TEST_F(Sampler, ThreadCountDoesNotChangeOutput) {
  req.count = 150;
  setenv("REDI_THREADS", "1", 1);
  const auto one = sample(model, req, process);
  setenv("REDI_THREADS", "3", 1);
  EXPECT_EQ(sampler_threads(), 3u);
  const auto three = sample(model, req, process);
  unsetenv("REDI_THREADS");
  EXPECT_EQ(one.x, three.x);
  EXPECT_EQ(one.z, three.z);
}

TEST_F(Sampler, ShapesLabelsAndFixedClass) {
  req.label_mode = LabelMode::Fixed;
  req.class_label = 2;
  const auto r = sample(model, req, process);
  EXPECT_EQ(r.x.shape(), (Shape{5, 2, 2}));
  EXPECT_EQ(r.z.shape(), (Shape{5, 2, 3}));
  for (auto l : r.labels) EXPECT_EQ(l, 2u);
  req.class_label = 3;
  EXPECT_THROW(sample(model, req, process), ContractViolation);
}

TEST_F(Sampler, WarnsForOutOfDistributionGuidance) {
  req.trained_p_drop = 0.0;
  EXPECT_EQ(sample(model, req, process).warnings.size(), 1u);
  req.trained_p_drop = 0.2;
  EXPECT_TRUE(sample(model, req, process).warnings.empty());
  req.label_mode = LabelMode::Unconditional;
  EXPECT_EQ(sample(model, req, process).warnings.size(), 1u);
}

TEST_F(Sampler, GuidanceChangesOnlyWhatItShould) {
  req.guidance.cfg_mode = CfgMode::Off;
  req.guidance.rg_enabled = true;
  req.guidance.rg_weight = 1.0;
  const auto rg_unit = sample(model, req, process);
  req.guidance.rg_enabled = false;
  const auto plain = sample(model, req, process);
  EXPECT_LE(max_abs_diff(rg_unit.x, plain.x), 1e-9);
  req.guidance.rg_enabled = true;
  req.guidance.rg_weight = 1.5;
  EXPECT_GT(max_abs_diff(sample(model, req, process).x, plain.x), 1e-6);
}

TEST_F(Sampler, LatentOnlyRequestIgnoresSemanticStream) {
  req.semantic_input = false;
  req.guidance.rg_enabled = true;
  const auto a = sample(model, req, process);
  req.guidance.rg_enabled = false;
  const auto b = sample(model, req, process);
  EXPECT_EQ(a.x, b.x);
}

TEST_F(Sampler, NonFiniteModelIsNumericFailure) {
  model.params().mutable_value("head_x.bias")[0] = std::numeric_limits<double>::infinity();
  req.count = 100;
  setenv("REDI_THREADS", "2", 1);
  EXPECT_THROW(sample(model, req, process), NumericFailure);
  unsetenv("REDI_THREADS");
}

TEST_F(Sampler, VelocityModelUsesInterpolantSampler) {
  auto vel = JointDenoiser::create(testing::tiny_config(FusionMode::Merged, PredictionKind::Velocity), Rng(22));
  EXPECT_THROW(sample(vel, req, process), ContractViolation);
  NoiseProcess vp;
  vp.objective = Objective::InterpolantVelocity;
  // The fresh model is the zero map, so with no diffusion the chains stay at
  // their initial noise.
  req.guidance.diffusion_scale = 0.0;
  const auto r = sample(vel, req, vp);
  Rng chain0 = Rng(req.seed).fork(0);
  EXPECT_EQ(r.x[0], chain0.normal());
}

TEST(GuidanceDefaults, MatchRecipe) {
  GuidanceConfig g;
  EXPECT_EQ(g.cfg_weight, 2.4);
  EXPECT_EQ(g.cfg_mode, CfgMode::VaeOnly);
  EXPECT_EQ(g.rg_weight, 1.5);
  EXPECT_EQ(g.steps, 250u);
  g.steps = 0;
  EXPECT_THROW(g.validate(), ContractViolation);
}

}  // namespace
}  // namespace redi
