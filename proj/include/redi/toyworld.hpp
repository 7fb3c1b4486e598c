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
#include <optional>
#include <string>
#include <vector>

#include "redi/errors.hpp"
#include "redi/rng.hpp"
#include "redi/semantic.hpp"
#include "redi/tensor.hpp"

namespace redi {

struct ToyWorldConfig {
  std::size_t num_classes = 8;
  std::size_t modes_per_class = 2;
  std::size_t token_count = 16;
  std::size_t x_channels = 4;
  std::size_t z_full_channels = 32;
  double center_radius = 3.0;  // norm of each token's mode center
  double mode_std = 0.5;
  std::uint64_t seed = 1234;
};

// A class-conditional Gaussian mixture over token grids with a
// deterministic semantic encoder. Everything is drawn from `cfg.seed`.
struct ToySpec {
  ToyWorldConfig cfg;
  Tensor centers;  // [K * modes, L, C_x]
  OracleEncoder oracle;
  std::optional<PcaProjector> pca;

  static ToySpec create(const ToyWorldConfig& cfg) {
    require(cfg.num_classes >= 1 && cfg.modes_per_class >= 1 && cfg.token_count >= 1 && cfg.x_channels >= 1 &&
                cfg.z_full_channels >= 1 && cfg.mode_std > 0.0,
            "ToySpec: invalid toy world configuration");
    Rng rng(cfg.seed);
    Rng crng = rng.fork(1);
    const std::size_t n_modes = cfg.num_classes * cfg.modes_per_class;
    Tensor centers({n_modes, cfg.token_count, cfg.x_channels});
    for (std::size_t m = 0; m < n_modes * cfg.token_count; ++m) {
      double norm = 0.0;
      std::vector<double> v(cfg.x_channels);
      for (double& e : v) {
        e = crng.normal();
        norm += e * e;
      }
      norm = std::sqrt(norm);
      for (std::size_t c = 0; c < cfg.x_channels; ++c)
        centers[m * cfg.x_channels + c] = cfg.center_radius * v[c] / norm;
    }
    return {cfg, std::move(centers), OracleEncoder::from_seed(rng.fork(2).next_u64(), cfg.x_channels, cfg.z_full_channels),
            std::nullopt};
  }

  const PcaProjector& projector() const {
    require(pca.has_value(), "ToySpec: PCA projector has not been fitted");
    return *pca;
  }

  Tensor semantic_codes(const Tensor& x0) const { return pca_project(oracle.encode(x0), projector()); }
};

struct PairBatch {
  Tensor x0;                        // [n, L, C_x]
  Tensor z0;                        // [n, L, C'_z]
  std::vector<std::size_t> labels;  // class per sample
};

// Draws x only; used before a projector exists.
inline Tensor sample_latents(const ToySpec& spec, std::size_t n, Rng& rng, std::vector<std::size_t>* labels = nullptr) {
  const auto& c = spec.cfg;
  const std::size_t per = c.token_count * c.x_channels;
  Tensor x({n, c.token_count, c.x_channels});
  if (labels) labels->resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = rng.uniform_int(c.num_classes);
    const std::size_t mode = rng.uniform_int(c.modes_per_class);
    if (labels) (*labels)[i] = label;
    const double* center = spec.centers.data() + (label * c.modes_per_class + mode) * per;
    for (std::size_t j = 0; j < per; ++j) x[i * per + j] = center[j] + c.mode_std * rng.normal();
  }
  return x;
}

inline PairBatch generate_pairs(const ToySpec& spec, std::size_t n, Rng& rng) {
  require(n >= 1, "generate_pairs: n must be >= 1");
  PairBatch b;
  b.x0 = sample_latents(spec, n, rng, &b.labels);
  b.z0 = spec.semantic_codes(b.x0);
  return b;
}

// Per-token full semantic vectors, [n_tokens, C_z], for fitting PCA.
inline Tensor semantic_fit_samples(const ToySpec& spec, std::size_t n_tokens, Rng& rng) {
  const std::size_t L = spec.cfg.token_count;
  const std::size_t n = (n_tokens + L - 1) / L;
  Tensor z = spec.oracle.encode(sample_latents(spec, n, rng));
  Tensor out({n_tokens, spec.cfg.z_full_channels});
  std::copy_n(z.data(), out.size(), out.data());
  return out;
}

// ---- metrics ------------------------------------------------------------

struct FrechetResult {
  double distance = 0.0;
  bool regularized = false;
};

namespace detail {

inline void gaussian_fit(const Tensor& set, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const auto x = set.matrix();
  mu = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
  cov = (c.transpose() * c) / double(set.rows() - 1);
  cov = 0.5 * (cov + cov.transpose());
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd r = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * r.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// Squared Frechet distance between Gaussian fits of two sample sets, rows
// are samples. tr((Sa Sb)^1/2) is evaluated as tr((Sa^1/2 Sb Sa^1/2)^1/2).
inline FrechetResult frechet_gaussian_distance(const Tensor& set_a, const Tensor& set_b) {
  const std::size_t d = set_a.cols();
  require(set_b.cols() == d, "frechet_gaussian_distance: dimension mismatch");
  if (set_a.rows() <= d || set_b.rows() <= d)
    throw InsufficientData("frechet_gaussian_distance: need more than " + std::to_string(d) +
                           " samples per set (dimension " + std::to_string(d) + "), got " +
                           std::to_string(set_a.rows()) + " and " + std::to_string(set_b.rows()));
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  detail::gaussian_fit(set_a, mu_a, cov_a);
  detail::gaussian_fit(set_b, mu_b, cov_b);

  FrechetResult res;
  auto min_eig = [](const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
  };
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(Eigen::Index(d), Eigen::Index(d));
  if (min_eig(cov_a) < 0.0) {
    cov_a += 1e-9 * eye;
    res.regularized = true;
  }
  if (min_eig(cov_b) < 0.0) {
    cov_b += 1e-9 * eye;
    res.regularized = true;
  }
  const Eigen::MatrixXd sa = detail::psd_sqrt(cov_a);
  Eigen::MatrixXd inner = sa * cov_b * sa;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double dist = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  res.distance = std::max(dist, 0.0);
  return res;
}

// Squared 2-Wasserstein distance between two 1-D empirical measures,
// evaluated exactly from their quantile functions.
inline double wasserstein2_sq_1d(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && !b.empty(), "wasserstein2_sq_1d: empty input");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = double(a.size()), nb = double(b.size());
  std::size_t i = 0, j = 0;
  double u = 0.0, acc = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next_a = double(i + 1) / na, next_b = double(j + 1) / nb;
    const double next = std::min(next_a, next_b);
    const double diff = a[i] - b[j];
    acc += (next - u) * diff * diff;
    u = next;
    if (next_a <= next) ++i;
    if (next_b <= next) ++j;
  }
  return acc;
}

// Projection directions drawn uniformly on the unit sphere, [count, D].
inline Tensor random_directions(std::size_t count, std::size_t dim, Rng& rng) {
  Tensor dirs = rng.normal({count, dim});
  for (std::size_t p = 0; p < count; ++p) {
    double n = 0.0;
    for (std::size_t c = 0; c < dim; ++c) n += dirs.at(p, c) * dirs.at(p, c);
    n = std::sqrt(n);
    for (std::size_t c = 0; c < dim; ++c) dirs.at(p, c) /= n;
  }
  return dirs;
}

// sqrt of the mean over directions of the squared 1-D W2 distance.
inline double sliced_wasserstein_with(const Tensor& set_a, const Tensor& set_b, const Tensor& directions) {
  require(set_a.cols() == set_b.cols() && directions.cols() == set_a.cols(), "sliced_wasserstein: dimension mismatch");
  const RowMatrix pa = set_a.matrix() * directions.matrix().transpose();
  const RowMatrix pb = set_b.matrix() * directions.matrix().transpose();
  double acc = 0.0;
  for (Eigen::Index p = 0; p < pa.cols(); ++p) {
    std::vector<double> va(std::size_t(pa.rows())), vb(std::size_t(pb.rows()));
    for (Eigen::Index r = 0; r < pa.rows(); ++r) va[std::size_t(r)] = pa(r, p);
    for (Eigen::Index r = 0; r < pb.rows(); ++r) vb[std::size_t(r)] = pb(r, p);
    acc += wasserstein2_sq_1d(std::move(va), std::move(vb));
  }
  return std::sqrt(acc / double(pa.cols()));
}

inline double sliced_wasserstein(const Tensor& set_a, const Tensor& set_b, std::size_t num_projections, Rng& rng) {
  require(num_projections >= 1, "sliced_wasserstein: need at least one projection");
  return sliced_wasserstein_with(set_a, set_b, random_directions(num_projections, set_a.cols(), rng));
}

// Mean per-token distance between generated codes and the codes of the
// generated latents. Zero for pairs produced by the toy world itself.
inline double joint_coherence(const Tensor& x_gen, const Tensor& z_gen, const ToySpec& spec) {
  const Tensor expect = spec.semantic_codes(x_gen);
  expect.check_same(z_gen.reshaped(expect.shape()), "joint_coherence");
  const std::size_t k = expect.cols(), tokens = expect.rows();
  double acc = 0.0;
  for (std::size_t r = 0; r < tokens; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double e = z_gen[r * k + c] - expect[r * k + c];
      s += e * e;
    }
    acc += std::sqrt(s);
  }
  return acc / double(tokens);
}

// Rows = samples, columns = every token's channels.
inline Tensor flatten_samples(const Tensor& batch) {
  require(batch.rank() >= 2, "flatten_samples: need a batched tensor");
  const std::size_t n = batch.dim(0);
  return batch.reshaped({n, batch.size() / n});
}

inline Tensor concat_features(const Tensor& a, const Tensor& b) {
  const Tensor fa = flatten_samples(a), fb = flatten_samples(b);
  require(fa.rows() == fb.rows(), "concat_features: sample count mismatch");
  Tensor out({fa.rows(), fa.cols() + fb.cols()});
  out.matrix().leftCols(Eigen::Index(fa.cols())) = fa.matrix();
  out.matrix().rightCols(Eigen::Index(fb.cols())) = fb.matrix();
  return out;
}

struct MetricReport {
  double fgd_x = 0.0;
  double fgd_joint = 0.0;
  double sliced_w2 = 0.0;
  double coherence_err = 0.0;
  std::size_t sample_count = 0;
  bool regularized = false;
};

struct EvalOptions {
  std::size_t reference_count = 10000;
  std::size_t num_projections = 64;
  std::uint64_t seed = 99;
};

// Scores generated pairs against a fresh draw from the toy world.
inline MetricReport evaluate_samples(const Tensor& x_gen, const Tensor& z_gen, const ToySpec& spec,
                                     const EvalOptions& opt) {
  Rng rng(opt.seed);
  Rng data_rng = rng.fork(1), proj_rng = rng.fork(2);
  const PairBatch ref = generate_pairs(spec, opt.reference_count, data_rng);
  MetricReport r;
  r.sample_count = x_gen.dim(0);
  const auto fx = frechet_gaussian_distance(flatten_samples(x_gen), flatten_samples(ref.x0));
  const auto fj = frechet_gaussian_distance(concat_features(x_gen, z_gen), concat_features(ref.x0, ref.z0));
  r.fgd_x = fx.distance;
  r.fgd_joint = fj.distance;
  r.regularized = fx.regularized || fj.regularized;
  r.sliced_w2 = sliced_wasserstein(flatten_samples(x_gen), flatten_samples(ref.x0), opt.num_projections, proj_rng);
  r.coherence_err = joint_coherence(x_gen, z_gen, spec);
  return r;
}

}  // namespace redi
