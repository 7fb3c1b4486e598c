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
#include <cstddef>
#include <functional>
#include <vector>

#include "redi/errors.hpp"
#include "redi/tensor.hpp"

namespace redi {

// Discrete noise schedule. `timesteps[i]` is the index in the training
// schedule that position i corresponds to; it is the identity unless the
// schedule was respaced for sampling.
struct DdpmSchedule {
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  std::vector<std::size_t> timesteps;

  std::size_t steps() const noexcept { return beta.size(); }

  // Posterior variance of q(x_{t-1} | x_t, x_0); zero at t = 0.
  double posterior_variance(std::size_t t) const {
    if (t == 0) return 0.0;
    return beta[t] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
  }
};

inline DdpmSchedule build_linear_ddpm(std::size_t steps, double beta_start, double beta_end) {
  require(steps >= 1, "build_linear_ddpm: need at least one step");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
          "build_linear_ddpm: require 0 < beta_start <= beta_end < 1");
  DdpmSchedule s;
  s.beta.resize(steps);
  s.alpha_bar.resize(steps);
  s.timesteps.resize(steps);
  double prod = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : double(i) / double(steps - 1);
    s.beta[i] = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - s.beta[i];
    s.alpha_bar[i] = prod;
    s.timesteps[i] = i;
  }
  return s;
}

// Evenly strided subsequence of `base` (first and last step always kept)
// with betas recomputed so the cumulative products match the kept steps.
inline DdpmSchedule respace(const DdpmSchedule& base, std::size_t count) {
  require(count >= 1 && count <= base.steps(), "respace: step count must be in [1, T]");
  if (count == base.steps()) return base;
  DdpmSchedule s;
  const double stride = count == 1 ? 0.0 : double(base.steps() - 1) / double(count - 1);
  double last = 1.0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto idx = count == 1 ? base.steps() - 1 : std::size_t(std::llround(double(i) * stride));
    const std::size_t orig = base.timesteps[idx];
    s.timesteps.push_back(orig);
    s.alpha_bar.push_back(base.alpha_bar[idx]);
    s.beta.push_back(1.0 - base.alpha_bar[idx] / last);
    last = base.alpha_bar[idx];
  }
  return s;
}

// x_t = alpha(t) x_0 + sigma(t) eps on t in [0, 1]; data at t = 0.
struct Interpolant {
  std::function<double(double)> alpha;
  std::function<double(double)> sigma;
  std::function<double(double)> alpha_dot;
  std::function<double(double)> sigma_dot;

  static Interpolant linear() {
    return {[](double t) { return 1.0 - t; }, [](double t) { return t; },
            [](double) { return -1.0; }, [](double) { return 1.0; }};
  }
};

struct JointState {
  Tensor x;
  Tensor z;
  double t = 0.0;  // integer step for DDPM, real time in [0, 1] for the interpolant
};

namespace detail {

inline Tensor mix_streams(const Tensor& data, const Tensor& noise, double a, double s) {
  data.check_same(noise, "forward process");
  return axpby(a, data, s, noise);
}

inline void check_pair(const Tensor& x0, const Tensor& z0, const Tensor& eps_x, const Tensor& eps_z) {
  x0.check_same(eps_x, "forward process (x)");
  z0.check_same(eps_z, "forward process (z)");
  if (x0.rank() >= 2 && z0.rank() >= 2)
    require(x0.dim(x0.rank() - 2) == z0.dim(z0.rank() - 2), "forward process: x and z token counts differ");
}

}  // namespace detail

inline JointState joint_forward_ddpm(const Tensor& x0, const Tensor& z0, std::size_t t, const Tensor& eps_x,
                                     const Tensor& eps_z, const DdpmSchedule& sched) {
  require(t < sched.steps(), "joint_forward_ddpm: t out of range");
  detail::check_pair(x0, z0, eps_x, eps_z);
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double s = std::sqrt(1.0 - sched.alpha_bar[t]);
  return {detail::mix_streams(x0, eps_x, a, s), detail::mix_streams(z0, eps_z, a, s), double(t)};
}

inline JointState joint_forward_interpolant(const Tensor& x0, const Tensor& z0, double t, const Tensor& eps_x,
                                            const Tensor& eps_z, const Interpolant& interp) {
  require(t >= 0.0 && t <= 1.0, "joint_forward_interpolant: t must lie in [0, 1]");
  detail::check_pair(x0, z0, eps_x, eps_z);
  const double a = interp.alpha(t), s = interp.sigma(t);
  return {detail::mix_streams(x0, eps_x, a, s), detail::mix_streams(z0, eps_z, a, s), t};
}

inline Tensor velocity_target(const Tensor& x0, const Tensor& eps, double t, const Interpolant& interp) {
  require(t >= 0.0 && t <= 1.0, "velocity_target: t must lie in [0, 1]");
  return detail::mix_streams(x0, eps, interp.alpha_dot(t), interp.sigma_dot(t));
}

}  // namespace redi
