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

// Closed-form optimal denoisers for a 1-D Gaussian target N(m, s^2), used to
// drive the samplers without a network.
#pragma once

#include <cmath>
#include <vector>

#include "redi/sampling.hpp"

namespace redi::testing {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  std::size_t n = 0;

  double mean_se() const { return std::sqrt(var / double(n)); }
  // Standard error of the sample variance under a Gaussian law.
  double var_se() const { return var * std::sqrt(2.0 / double(n - 1)); }
};

inline Moments moments_of(const Tensor& t) {
  Moments m;
  m.n = t.size();
  for (double v : t.values()) m.mean += v;
  m.mean /= double(m.n);
  for (double v : t.values()) m.var += (v - m.mean) * (v - m.mean);
  m.var /= double(m.n - 1);
  return m;
}

// E[eps | x_t] for x_t = sqrt(ab) x0 + sqrt(1 - ab) eps, x0 ~ N(m, s^2).
inline Tensor gaussian_eps(const Tensor& x, double ab, double m, double s) {
  Tensor out(x.shape());
  const double denom = ab * s * s + 1.0 - ab;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::sqrt(1.0 - ab) * (x[i] - std::sqrt(ab) * m) / denom;
  return out;
}

// E[eps - x0 | x_t] for the linear path x_t = (1 - t) x0 + t eps.
inline Tensor gaussian_velocity(const Tensor& x, double t, double m, double s) {
  Tensor out(x.shape());
  const double var = (1.0 - t) * (1.0 - t) * s * s + t * t;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - (1.0 - t) * m;
    out[i] = t / var * d - (m + (1.0 - t) * s * s / var * d);
  }
  return out;
}

inline std::vector<Rng> chain_rngs(std::size_t n, std::uint64_t seed) {
  std::vector<Rng> rngs;
  rngs.reserve(n);
  const Rng root(seed);
  for (std::size_t i = 0; i < n; ++i) rngs.push_back(root.fork(i));
  return rngs;
}

// Endpoints of n ancestral chains on the respaced training schedule. Both
// streams carry the same 1-D target.
inline JointState ddpm_gaussian_chains(double m, double s, std::size_t n, std::size_t steps, std::uint64_t seed) {
  const DdpmSchedule sched = respace(build_linear_ddpm(1000, 1e-4, 2e-2), steps);
  auto rngs = chain_rngs(n, seed);
  JointState st{Tensor({n, 1}), Tensor({n, 1}), 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    st.x[i] = rngs[i].normal();
    st.z[i] = rngs[i].normal();
  }
  for (std::size_t k = steps; k-- > 0;) {
    st.t = double(k);
    const double ab = sched.alpha_bar[k];
    st = ddpm_ancestral_step(st, {gaussian_eps(st.x, ab, m, s), gaussian_eps(st.z, ab, m, s)}, sched, rngs);
  }
  return st;
}

// Integrates from t = 1 to 0 with the exact velocity field.
inline JointState em_gaussian_chains(double m, double s, const Tensor& start, std::size_t steps, double scale,
                                     std::uint64_t seed) {
  const auto it = Interpolant::linear();
  auto rngs = chain_rngs(start.rows(), seed);
  const double dt = 1.0 / double(steps);
  JointState st{start, start, 1.0};
  for (std::size_t k = steps; k > 0; --k) {
    st.t = double(k) * dt;
    st = euler_maruyama_step(st, {gaussian_velocity(st.x, st.t, m, s), gaussian_velocity(st.z, st.t, m, s)}, it, dt,
                             rngs, scale);
  }
  return st;
}

// Mean absolute deviation of the deterministic Euler endpoint from the
// exact flow map x1 -> m + s x1.
inline double euler_transport_error(double m, double s, const Tensor& start, std::size_t steps) {
  const JointState st = em_gaussian_chains(m, s, start, steps, 0.0, 0);
  double err = 0.0;
  for (std::size_t i = 0; i < start.size(); ++i) err += std::abs(st.x[i] - (m + s * start[i]));
  return err / double(start.size());
}

}  // namespace redi::testing
