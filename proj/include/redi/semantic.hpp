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

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "redi/errors.hpp"
#include "redi/rng.hpp"
#include "redi/tensor.hpp"

namespace redi {

// Surrogate semantic encoder: z[l] = tanh(x[l] M), token by token.
struct OracleEncoder {
  Tensor mixing;  // [C_x, C_z]

  static OracleEncoder from_seed(std::uint64_t seed, std::size_t x_channels, std::size_t z_channels) {
    Rng rng(seed);
    Tensor m = rng.normal({x_channels, z_channels});
    m *= 1.0 / std::sqrt(double(x_channels));
    return {std::move(m)};
  }

  std::size_t x_channels() const { return mixing.dim(0); }
  std::size_t z_channels() const { return mixing.dim(1); }

  Tensor encode(const Tensor& x) const {
    require(x.cols() == x_channels(), "oracle_encode: expected " + std::to_string(x_channels()) +
                                          " channels, got " + shape_string(x.shape()));
    Tensor z = matmul(x, mixing);
    for (double& v : z.values()) v = std::tanh(v);
    return z;
  }

  // Largest singular value of M: the Lipschitz constant of encode per token.
  double spectral_norm() const {
    Eigen::JacobiSVD<RowMatrix> svd(mixing.matrix());
    return svd.singularValues()(0);
  }
};

inline Tensor oracle_encode(const Tensor& x0, const OracleEncoder& enc) { return enc.encode(x0); }

struct PcaProjector {
  Tensor mean;    // [C_z]
  Tensor basis;   // [C_z, rank], orthonormal columns by decreasing variance
  Tensor scales;  // [rank], sqrt of the component variances

  std::size_t full_dim() const { return mean.size(); }
  std::size_t rank() const { return scales.size(); }

  friend bool operator==(const PcaProjector&, const PcaProjector&) = default;
};

// Eigenvalues of the sample covariance (divisor N - 1), descending.
inline std::vector<double> covariance_spectrum(const Tensor& samples) {
  require(samples.rank() == 2 && samples.dim(0) >= 2, "covariance_spectrum: need an [N, D] sample matrix, N >= 2");
  const auto x = samples.matrix();
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const RowMatrix centered = x.rowwise() - mu;
  const RowMatrix cov = (centered.transpose() * centered) / double(samples.dim(0) - 1);
  Eigen::SelfAdjointEigenSolver<RowMatrix> es(cov, Eigen::EigenvaluesOnly);
  std::vector<double> out(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  std::reverse(out.begin(), out.end());
  return out;
}

inline double explained_variance_ratio(const std::vector<double>& spectrum, std::size_t rank) {
  const double total = std::accumulate(spectrum.begin(), spectrum.end(), 0.0);
  const double kept = std::accumulate(spectrum.begin(), spectrum.begin() + std::ptrdiff_t(rank), 0.0);
  return total > 0.0 ? kept / total : 0.0;
}

inline PcaProjector pca_fit(const Tensor& samples, std::size_t rank) {
  require(samples.rank() == 2, "pca_fit: samples must be [N, C_z]");
  const std::size_t n = samples.dim(0), d = samples.dim(1);
  require(rank >= 1 && rank <= d, "pca_fit: rank must lie in [1, C_z]");
  require(n > d && n > rank, "pca_fit: need more samples than feature dimensions");

  const auto x = samples.matrix();
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const RowMatrix centered = x.rowwise() - mu;
  const RowMatrix cov = (centered.transpose() * centered) / double(n - 1);
  if (cov.trace() <= 0.0) throw DegenerateData("pca_fit: input has zero variance");

  Eigen::SelfAdjointEigenSolver<RowMatrix> es(cov);
  const auto& evals = es.eigenvalues();  // ascending
  const auto& evecs = es.eigenvectors();

  PcaProjector p;
  p.mean = Tensor({d}, std::vector<double>(mu.data(), mu.data() + d));
  p.basis = Tensor({d, rank});
  p.scales = Tensor({rank});
  const double floor = 1e-14 * evals(Eigen::Index(d - 1));
  for (std::size_t k = 0; k < rank; ++k) {
    const Eigen::Index src = Eigen::Index(d - 1 - k);
    const double lambda = evals(src);
    if (!(lambda > floor))
      throw DegenerateData("pca_fit: component " + std::to_string(k) + " has zero variance");
    Eigen::VectorXd v = evecs.col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    for (std::size_t i = 0; i < d; ++i) p.basis.at(i, k) = v(Eigen::Index(i));
    p.scales[k] = std::sqrt(lambda);
  }
  return p;
}

// [.., C_z] -> [.., rank], standardized coefficients.
inline Tensor pca_project(const Tensor& z_full, const PcaProjector& proj) {
  require(z_full.cols() == proj.full_dim(), "pca_project: feature width mismatch");
  Shape shape = z_full.shape();
  shape.back() = proj.rank();
  Tensor out(shape);
  const Eigen::RowVectorXd mu = ConstMatrixMap(proj.mean.data(), 1, Eigen::Index(proj.full_dim()));
  out.matrix().noalias() = (z_full.matrix().rowwise() - mu) * proj.basis.matrix();
  const auto k = out.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= proj.scales[i % k];
  return out;
}

inline Tensor pca_lift(const Tensor& coeffs, const PcaProjector& proj) {
  require(coeffs.cols() == proj.rank(), "pca_lift: coefficient width mismatch");
  Tensor scaled = coeffs;
  const auto k = scaled.cols();
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= proj.scales[i % k];
  Shape shape = coeffs.shape();
  shape.back() = proj.full_dim();
  Tensor out(shape);
  const Eigen::RowVectorXd mu = ConstMatrixMap(proj.mean.data(), 1, Eigen::Index(proj.full_dim()));
  out.matrix().noalias() = scaled.matrix() * proj.basis.matrix().transpose();
  out.matrix().rowwise() += mu;
  return out;
}

}  // namespace redi
