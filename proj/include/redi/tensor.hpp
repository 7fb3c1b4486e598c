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

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "redi/errors.hpp"

namespace redi {

using Shape = std::vector<std::size_t>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(shape_size(shape_) == data_.size(),
            "Tensor: shape " + shape_string(shape_) + " does not match " +
                std::to_string(data_.size()) + " values");
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const {
    require(i < shape_.size(), "Tensor::dim out of range");
    return shape_[i];
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

  double item() const {
    require(data_.size() == 1, "Tensor::item on non-scalar " + shape_string(shape_));
    return data_[0];
  }

  // Row count when viewed as a matrix whose columns are the last extent.
  std::size_t rows() const { return shape_.empty() ? 1 : data_.size() / std::max<std::size_t>(shape_.back(), 1); }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  MatrixMap matrix() { return MatrixMap(data_.data(), Eigen::Index(rows()), Eigen::Index(cols())); }
  ConstMatrixMap matrix() const {
    return ConstMatrixMap(data_.data(), Eigen::Index(rows()), Eigen::Index(cols()));
  }

  Tensor reshaped(Shape shape) const& {
    require(shape_size(shape) == data_.size(), "Tensor::reshaped: size mismatch");
    return Tensor(std::move(shape), data_);
  }
  Tensor reshaped(Shape shape) && {
    require(shape_size(shape) == data_.size(), "Tensor::reshaped: size mismatch");
    return Tensor(std::move(shape), std::move(data_));
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double s) { return a *= s; }
  friend Tensor operator*(double s, Tensor a) { return a *= s; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  void check_same(const Tensor& o, const char* op) const {
    require(shape_ == o.shape_, std::string("Tensor ") + op + ": shape mismatch " +
                                    shape_string(shape_) + " vs " + shape_string(o.shape_));
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// a * x + b * y, elementwise.
inline Tensor axpby(double a, const Tensor& x, double b, const Tensor& y) {
  x.check_same(y, "axpby");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}

// [n,k] x [k,m] with leading dimensions flattened into rows.
inline Tensor matmul(const Tensor& a, const Tensor& w) {
  require(w.rank() == 2 && a.cols() == w.dim(0),
          "matmul: incompatible shapes " + shape_string(a.shape()) + " x " + shape_string(w.shape()));
  Shape out_shape = a.shape();
  out_shape.back() = w.dim(1);
  Tensor out(out_shape);
  out.matrix().noalias() = a.matrix() * w.matrix();
  return out;
}

inline Tensor transpose(const Tensor& m) {
  require(m.rank() == 2, "transpose: rank-2 tensor required");
  Tensor out({m.dim(1), m.dim(0)});
  out.matrix() = m.matrix().transpose();
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.check_same(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double squared_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return s;
}

}  // namespace redi
