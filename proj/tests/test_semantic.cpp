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

#include <cmath>

#include "oracles.hpp"
#include "redi/errors.hpp"
#include "redi/rng.hpp"
#include "redi/semantic.hpp"

namespace redi {
namespace {

TEST(OracleEncoder, ZeroMapsToZeroAndOutputIsBounded) {
  const auto enc = OracleEncoder::from_seed(3, 4, 32);
  const Tensor zero = enc.encode(Tensor({4, 4}));
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
  Tensor big = Rng(1).normal({16, 4});
  big *= 3.0;
  const Tensor z = oracle_encode(big, enc);
  for (double v : z.values()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(OracleEncoder, OnesMatchDirectRecomputation) {
  const auto enc = OracleEncoder::from_seed(77, 4, 32);
  const Tensor z = enc.encode(Tensor::ones({4, 4}));
  ASSERT_EQ(z.shape(), (Shape{4, 32}));
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t c = 0; c < 32; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += enc.mixing[k * 32 + c];
      EXPECT_NEAR(z[l * 32 + c], std::tanh(s), 1e-15);
    }
}

TEST(OracleEncoder, DeterministicAndLipschitz) {
  const auto a = OracleEncoder::from_seed(5, 4, 32), b = OracleEncoder::from_seed(5, 4, 32);
  EXPECT_EQ(a.mixing, b.mixing);
  Rng rng(6);
  const double lip = a.spectral_norm();
  for (int i = 0; i < 200; ++i) {
    Tensor x = rng.normal({1, 4}), y = rng.normal({1, 4});
    EXPECT_EQ(a.encode(x), b.encode(x));
    const double dz = std::sqrt(squared_norm(axpby(1, a.encode(x), -1, a.encode(y))));
    const double dx = std::sqrt(squared_norm(axpby(1, x, -1, y)));
    EXPECT_LE(dz, lip * dx + 1e-12);
  }
}

class Pca : public ::testing::Test {
 protected:
  Tensor gaussian_samples(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Tensor mix = rng.normal({d, d});
    return matmul(rng.normal({n, d}), mix);
  }
};

TEST_F(Pca, ProjectorInvariants) {
  const Tensor s = gaussian_samples(2048, 32, 1);
  const auto p = pca_fit(s, 8);
  ASSERT_EQ(p.rank(), 8u);
  const Tensor gram = matmul(transpose(p.basis), p.basis);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(gram.at(i, j), i == j ? 1.0 : 0.0, 1e-10);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_GT(p.scales[k], 0.0);
    if (k > 0) {
      EXPECT_GE(p.scales[k - 1], p.scales[k]);
    }
  }
}

TEST_F(Pca, SubspaceMatchesJacobiOracle) {
  const Tensor s = gaussian_samples(2048, 32, 2);
  const auto p = pca_fit(s, 8);
  std::vector<double> mean;
  testing::Mat cov;
  testing::moments(s, mean, cov);
  const auto oracle = testing::jacobi_eigen(cov);
  for (std::size_t k = 0; k < 8; ++k) {
    double dot = 0.0;
    for (std::size_t i = 0; i < 32; ++i) dot += p.basis.at(i, k) * oracle.vectors[k][i];
    EXPECT_GE(std::abs(dot), 1.0 - 1e-6) << "component " << k;
    EXPECT_NEAR(p.scales[k] * p.scales[k], oracle.values[k], 1e-9 * oracle.values[0]);
  }
}

TEST_F(Pca, SignConventionMakesLargestEntryPositive) {
  const auto p = pca_fit(gaussian_samples(500, 6, 3), 6);
  for (std::size_t k = 0; k < 6; ++k) {
    double best = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
      if (std::abs(p.basis.at(i, k)) > std::abs(best)) best = p.basis.at(i, k);
    EXPECT_GT(best, 0.0);
  }
  EXPECT_EQ(p, pca_fit(gaussian_samples(500, 6, 3), 6));
}

TEST_F(Pca, OneDimensionalSubspace) {
  Rng rng(4);
  Tensor dir = rng.normal({1, 10});
  Tensor s({1000, 10});
  for (std::size_t r = 0; r < 1000; ++r) {
    const double c = rng.normal();
    for (std::size_t i = 0; i < 10; ++i) s[r * 10 + i] = c * dir[i] + 1e-3 * rng.normal();
  }
  EXPECT_GE(explained_variance_ratio(covariance_spectrum(s), 1), 0.99);
}

TEST_F(Pca, FullRankRoundTrips) {
  const Tensor s = gaussian_samples(400, 12, 5);
  const auto p = pca_fit(s, 12);
  EXPECT_LE(max_abs_diff(pca_lift(pca_project(s, p), p), s), 1e-8);
  EXPECT_NEAR(explained_variance_ratio(covariance_spectrum(s), 12), 1.0, 1e-10);
}

TEST_F(Pca, ProjectLiftIdentityOnCoefficients) {
  const auto p = pca_fit(gaussian_samples(400, 12, 6), 5);
  Tensor c = Rng(7).normal({9, 5});
  EXPECT_LE(max_abs_diff(pca_project(pca_lift(c, p), p), c), 1e-10);
  const Tensor zero_lift = pca_lift(Tensor({1, 5}), p);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(zero_lift[i], p.mean[i], 1e-15);
}

TEST_F(Pca, MeanProjectsToZero) {
  const auto p = pca_fit(gaussian_samples(400, 12, 8), 4);
  Tensor m({3, 12});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t i = 0; i < 12; ++i) m[r * 12 + i] = p.mean[i];
  const Tensor c = pca_project(m, p);
  for (double v : c.values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST_F(Pca, StandardizedScoresHaveUnitVariance) {
  const Tensor s = gaussian_samples(2048, 32, 9);
  const Tensor c = pca_project(s, pca_fit(s, 8));
  for (std::size_t k = 0; k < 8; ++k) {
    double s2 = 0.0;
    for (std::size_t r = 0; r < 2048; ++r) s2 += c[r * 8 + k] * c[r * 8 + k];
    EXPECT_NEAR(s2 / 2047.0, 1.0, 0.02);
  }
}

TEST_F(Pca, ReconstructionErrorNonIncreasingInRank) {
  const Tensor s = gaussian_samples(600, 10, 10);
  double prev = 1e300;
  for (std::size_t r = 1; r <= 10; ++r) {
    const auto p = pca_fit(s, r);
    const double err = squared_norm(axpby(1, pca_lift(pca_project(s, p), p), -1, s));
    EXPECT_LE(err, prev * (1 + 1e-12));
    prev = err;
  }
}

TEST_F(Pca, ExplainedVarianceNonDecreasingInRank) {
  const auto spec = covariance_spectrum(gaussian_samples(600, 32, 11));
  double prev = 0.0;
  for (std::size_t r : {1, 2, 4, 8}) {
    const double e = explained_variance_ratio(spec, r);
    EXPECT_GE(e, prev);
    prev = e;
  }
}

TEST_F(Pca, Errors) {
  const Tensor s = gaussian_samples(20, 8, 12);
  EXPECT_THROW(pca_fit(s, 9), ContractViolation);
  EXPECT_THROW(pca_fit(s, 0), ContractViolation);
  EXPECT_THROW(pca_fit(gaussian_samples(8, 8, 13), 2), ContractViolation);
  EXPECT_THROW(pca_fit(Tensor({20, 8}, 3.0), 2), DegenerateData);
}

}  // namespace
}  // namespace redi
