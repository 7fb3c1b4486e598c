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
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "redi/errors.hpp"
#include "redi/tensor.hpp"

namespace redi {

// Handle to a node recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

// Reverse-mode differentiation over a graph recorded during one forward
// pass. Activations are 2-D: [rows, channels], where rows usually flatten
// (sample, token). Ops that broadcast per-sample vectors take the number of
// rows per sample as `group`.
//
// Parameter nodes reference the caller's tensors without copying; those
// tensors must outlive the tape and stay unchanged until backprop returns.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  Var constant(Tensor v, std::string op = "constant") {
    Node n;
    n.op = std::move(op);
    n.own = std::move(v);
    return push(std::move(n));
  }

  Var parameter(const std::string& name, const Tensor& v) {
    Node n;
    n.op = "param:" + name;
    n.param_name = name;
    n.ref = &v;
    n.requires_grad = grad_enabled_;
    return push(std::move(n));
  }

  const Tensor& value(Var v) const { return node(v).val(); }
  const std::string& op_name(Var v) const { return node(v).op; }

  // ---- elementwise and linear algebra ---------------------------------

  Var matmul(Var a, Var w) {
    const Tensor& av = value(a);
    const Tensor& wv = value(w);
    require(wv.rank() == 2 && av.cols() == wv.dim(0),
            "Tape::matmul: " + shape_string(av.shape()) + " x " + shape_string(wv.shape()));
    Tensor out({av.rows(), wv.dim(1)});
    out.matrix().noalias() = av.matrix() * wv.matrix();
    return record("matmul", std::move(out), {a, w}, [a, w](Tape& t, const Tensor& g) {
      if (t.needs(a)) t.grad_of(a).matrix().noalias() += g.matrix() * t.value(w).matrix().transpose();
      if (t.needs(w)) t.grad_of(w).matrix().noalias() += t.value(a).matrix().transpose() * g.matrix();
    });
  }

  Var add_bias(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(bv.size() == av.cols(), "Tape::add_bias: bias width mismatch");
    Tensor out = av;
    out.matrix().rowwise() += ConstMatrixMap(bv.data(), 1, Eigen::Index(bv.size())).row(0);
    return record("add_bias", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
      if (t.needs(a)) t.grad_of(a) += g;
      if (t.needs(b)) {
        Tensor& gb = t.grad_of(b);
        MatrixMap(gb.data(), 1, Eigen::Index(gb.size())).row(0) += g.matrix().colwise().sum();
      }
    });
  }

  Var linear(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

  Var add(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.size() == bv.size() && av.cols() == bv.cols(), "Tape::add: shape mismatch");
    Tensor out({av.rows(), av.cols()});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
      if (t.needs(a)) t.grad_of(a) += g;
      if (t.needs(b)) t.grad_of(b) += g;
    });
  }

  Var mul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.size() == bv.size() && av.cols() == bv.cols(), "Tape::mul: shape mismatch");
    Tensor out({av.rows(), av.cols()});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
      const Tensor& av = t.value(a);
      const Tensor& bv = t.value(b);
      if (t.needs(a)) {
        Tensor& ga = t.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (t.needs(b)) {
        Tensor& gb = t.grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }

  Var scale(Var a, double s) {
    Tensor out = as_matrix(value(a));
    out *= s;
    return record("scale", std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
      Tensor& ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
  }

  Var add_scalar(Var a, double s) {
    Tensor out = as_matrix(value(a));
    for (double& v : out.values()) v += s;
    return record("add_scalar", std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.grad_of(a) += g; });
  }

  Var silu(Var a) {
    Tensor out = as_matrix(value(a));
    for (double& v : out.values()) v = v / (1.0 + std::exp(-v));
    return record("silu", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
      const Tensor& x = t.value(a);
      Tensor& ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
      }
    });
  }

  // tanh-approximated GELU.
  Var gelu(Var a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c = 0.044715;
    Tensor out = as_matrix(value(a));
    for (double& v : out.values()) v = 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v)));
    return record("gelu", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
      const Tensor& x = t.value(a);
      Tensor& ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = x[i];
        const double th = std::tanh(k * (v + c * v * v * v));
        const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * c * v * v);
        ga[i] += g[i] * d;
      }
    });
  }

  Var tanh(Var a) {
    Tensor out = as_matrix(value(a));
    for (double& v : out.values()) v = std::tanh(v);
    return record("tanh", std::move(out), {a}, [this_out = nodes_.size(), a](Tape& t, const Tensor& g) {
      const Tensor& y = t.nodes_[this_out].val();
      Tensor& ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
  }

  // Per-row normalisation to zero mean and unit variance, no affine part.
  Var layer_norm(Var a, double eps = 1e-6) {
    const Tensor& x = value(a);
    const std::size_t rows = x.rows(), cols = x.cols();
    Tensor out({rows, cols});
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.data() + r * cols;
      double mean = 0.0;
      for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
      mean /= double(cols);
      double var = 0.0;
      for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
      var /= double(cols);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[r] = is;
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (xr[c] - mean) * is;
    }
    const std::size_t self = nodes_.size();
    return record("layer_norm", std::move(out), {a}, [a, self, inv_std](Tape& t, const Tensor& g) {
      const Tensor& y = t.nodes_[self].val();
      Tensor& ga = t.grad_of(a);
      const std::size_t cols = y.cols();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        const double* gr = g.data() + r * cols;
        const double* yr = y.data() + r * cols;
        double mg = 0.0, mgy = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          mg += gr[c];
          mgy += gr[c] * yr[c];
        }
        mg /= double(cols);
        mgy /= double(cols);
        const double is = (*inv_std)[r];
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += is * (gr[c] - mg - yr[c] * mgy);
      }
    });
  }

  // ---- broadcasting and reshuffling -------------------------------------

  // x[B*group, D] * g[B, D], each sample row of g broadcast over its group.
  Var mul_rows(Var x, Var gate, std::size_t group) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gate);
    check_group(xv, gv, group, "mul_rows");
    const std::size_t d = xv.cols();
    Tensor out({xv.rows(), d});
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      const double* gr = gv.data() + (r / group) * d;
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] * gr[c];
    }
    return record("mul_rows", std::move(out), {x, gate}, [x, gate, group](Tape& t, const Tensor& g) {
      const Tensor& xv = t.value(x);
      const Tensor& gv = t.value(gate);
      const std::size_t d = xv.cols();
      if (t.needs(x)) {
        Tensor& gx = t.grad_of(x);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
          const double* gr = gv.data() + (r / group) * d;
          for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[r * d + c] * gr[c];
        }
      }
      if (t.needs(gate)) {
        Tensor& gg = t.grad_of(gate);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
          double* ggr = gg.data() + (r / group) * d;
          for (std::size_t c = 0; c < d; ++c) ggr[c] += g[r * d + c] * xv[r * d + c];
        }
      }
    });
  }

  // x[B*group, D] + b[B, D], broadcast per sample.
  Var add_rows(Var x, Var b, std::size_t group) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(b);
    check_group(xv, bv, group, "add_rows");
    const std::size_t d = xv.cols();
    Tensor out({xv.rows(), d});
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      const double* br = bv.data() + (r / group) * d;
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] + br[c];
    }
    return record("add_rows", std::move(out), {x, b}, [x, b, group](Tape& t, const Tensor& g) {
      const std::size_t d = g.cols();
      if (t.needs(x)) t.grad_of(x) += g;
      if (t.needs(b)) {
        Tensor& gb = t.grad_of(b);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double* gbr = gb.data() + (r / group) * d;
          for (std::size_t c = 0; c < d; ++c) gbr[c] += g[r * d + c];
        }
      }
    });
  }

  // x[B*S, D] + table[S, D]: the same per-position rows added to every sample.
  Var add_tiled(Var x, Var table) {
    const Tensor& xv = value(x);
    const Tensor& tv = value(table);
    require(tv.cols() == xv.cols() && tv.rows() > 0 && xv.rows() % tv.rows() == 0,
            "Tape::add_tiled: incompatible shapes");
    const std::size_t d = xv.cols(), s = tv.rows();
    Tensor out({xv.rows(), d});
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] + tv[(r % s) * d + c];
    return record("add_tiled", std::move(out), {x, table}, [x, table, s](Tape& t, const Tensor& g) {
      const std::size_t d = g.cols();
      if (t.needs(x)) t.grad_of(x) += g;
      if (t.needs(table)) {
        Tensor& gt = t.grad_of(table);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < d; ++c) gt[(r % s) * d + c] += g[r * d + c];
      }
    });
  }

  Var col_slice(Var x, std::size_t start, std::size_t width) {
    const Tensor& xv = value(x);
    require(start + width <= xv.cols(), "Tape::col_slice: out of range");
    Tensor out({xv.rows(), width});
    out.matrix() = xv.matrix().middleCols(Eigen::Index(start), Eigen::Index(width));
    return record("col_slice", std::move(out), {x}, [x, start, width](Tape& t, const Tensor& g) {
      t.grad_of(x).matrix().middleCols(Eigen::Index(start), Eigen::Index(width)) += g.matrix();
    });
  }

  // Per sample: the group_a rows of a followed by the group_b rows of b.
  Var concat_groups(Var a, Var b, std::size_t group_a, std::size_t group_b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.cols() == bv.cols() && av.rows() % group_a == 0 && bv.rows() % group_b == 0 &&
                av.rows() / group_a == bv.rows() / group_b,
            "Tape::concat_groups: incompatible shapes");
    const std::size_t n = av.rows() / group_a, d = av.cols(), gs = group_a + group_b;
    Tensor out({n * gs, d});
    for (std::size_t s = 0; s < n; ++s) {
      std::copy_n(av.data() + s * group_a * d, group_a * d, out.data() + s * gs * d);
      std::copy_n(bv.data() + s * group_b * d, group_b * d, out.data() + (s * gs + group_a) * d);
    }
    return record("concat_groups", std::move(out), {a, b}, [a, b, group_a, group_b, n](Tape& t, const Tensor& g) {
      const std::size_t d = g.cols(), gs = group_a + group_b;
      for (std::size_t s = 0; s < n; ++s) {
        if (t.needs(a)) {
          Tensor& ga = t.grad_of(a);
          for (std::size_t i = 0; i < group_a * d; ++i) ga[s * group_a * d + i] += g[s * gs * d + i];
        }
        if (t.needs(b)) {
          Tensor& gb = t.grad_of(b);
          for (std::size_t i = 0; i < group_b * d; ++i) gb[s * group_b * d + i] += g[(s * gs + group_a) * d + i];
        }
      }
    });
  }

  // Rows [start, start + count) of every group of `group` rows.
  Var take_groups(Var x, std::size_t group, std::size_t start, std::size_t count) {
    const Tensor& xv = value(x);
    require(xv.rows() % group == 0 && start + count <= group, "Tape::take_groups: out of range");
    const std::size_t n = xv.rows() / group, d = xv.cols();
    Tensor out({n * count, d});
    for (std::size_t s = 0; s < n; ++s)
      std::copy_n(xv.data() + (s * group + start) * d, count * d, out.data() + s * count * d);
    return record("take_groups", std::move(out), {x}, [x, group, start, count, n](Tape& t, const Tensor& g) {
      const std::size_t d = g.cols();
      Tensor& gx = t.grad_of(x);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < count * d; ++i) gx[(s * group + start) * d + i] += g[s * count * d + i];
    });
  }

  Var gather_rows(Var table, std::vector<std::size_t> index) {
    const Tensor& tv = value(table);
    const std::size_t d = tv.cols();
    Tensor out({index.size(), d});
    for (std::size_t i = 0; i < index.size(); ++i) {
      require(index[i] < tv.rows(), "Tape::gather_rows: index out of range");
      std::copy_n(tv.data() + index[i] * d, d, out.data() + i * d);
    }
    return record("gather_rows", std::move(out), {table}, [table, index = std::move(index)](Tape& t, const Tensor& g) {
      const std::size_t d = g.cols();
      Tensor& gt = t.grad_of(table);
      for (std::size_t i = 0; i < index.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) gt[index[i] * d + c] += g[i * d + c];
    });
  }

  // Multi-head softmax self-attention. qkv is [B*seq, 3*D] holding the
  // query, key and value projections side by side; returns [B*seq, D].
  Var attention(Var qkv, std::size_t seq, std::size_t heads) {
    const Tensor& in = value(qkv);
    require(in.cols() % 3 == 0 && in.rows() % seq == 0, "Tape::attention: bad qkv shape");
    const std::size_t d = in.cols() / 3;
    require(d % heads == 0, "Tape::attention: width not divisible by heads");
    const std::size_t dh = d / heads, batch = in.rows() / seq;
    const double inv_scale = 1.0 / std::sqrt(double(dh));
    auto probs = std::make_shared<std::vector<RowMatrix>>(batch * heads);
    Tensor out({in.rows(), d});
    using Strided = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
    using StridedOut = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
    const Eigen::OuterStride<> in_stride(Eigen::Index(3 * d)), out_stride{Eigen::Index(d)};
    const auto S = Eigen::Index(seq), H = Eigen::Index(dh);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* base = in.data() + b * seq * 3 * d;
      for (std::size_t h = 0; h < heads; ++h) {
        Strided q(base + h * dh, S, H, in_stride);
        Strided k(base + d + h * dh, S, H, in_stride);
        Strided v(base + 2 * d + h * dh, S, H, in_stride);
        RowMatrix& p = (*probs)[b * heads + h];
        p.noalias() = (q * k.transpose()) * inv_scale;
        for (Eigen::Index r = 0; r < S; ++r) {
          const double m = p.row(r).maxCoeff();
          p.row(r) = (p.row(r).array() - m).exp();
          p.row(r) /= p.row(r).sum();
        }
        StridedOut o(out.data() + b * seq * d + h * dh, S, H, out_stride);
        o.noalias() = p * v;
      }
    }
    return record("attention", std::move(out), {qkv},
                  [qkv, seq, heads, d, dh, batch, inv_scale, probs](Tape& t, const Tensor& g) {
      const Tensor& in = t.value(qkv);
      Tensor& gin = t.grad_of(qkv);
      const Eigen::OuterStride<> in_stride(Eigen::Index(3 * d)), out_stride{Eigen::Index(d)};
      const auto S = Eigen::Index(seq), H = Eigen::Index(dh);
      RowMatrix dp, ds;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* base = in.data() + b * seq * 3 * d;
        double* gbase = gin.data() + b * seq * 3 * d;
        for (std::size_t h = 0; h < heads; ++h) {
          Strided q(base + h * dh, S, H, in_stride);
          Strided k(base + d + h * dh, S, H, in_stride);
          Strided v(base + 2 * d + h * dh, S, H, in_stride);
          Strided go(g.data() + b * seq * d + h * dh, S, H, out_stride);
          StridedOut gq(gbase + h * dh, S, H, in_stride);
          StridedOut gk(gbase + d + h * dh, S, H, in_stride);
          StridedOut gv(gbase + 2 * d + h * dh, S, H, in_stride);
          const RowMatrix& p = (*probs)[b * heads + h];
          gv.noalias() += p.transpose() * go;
          dp.noalias() = go * v.transpose();
          ds = p.array() * (dp.colwise() - (dp.array() * p.array()).rowwise().sum().matrix()).array();
          ds *= inv_scale;
          gq.noalias() += ds * k;
          gk.noalias() += ds.transpose() * q;
        }
      }
    });
  }

  // ---- reductions ------------------------------------------------------

  Var sum(Var a) {
    const Tensor& av = value(a);
    double s = 0.0;
    for (double v : av.values()) s += v;
    return record("sum", Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
      const double gs = g[0];
      for (double& v : t.grad_of(a).values()) v += gs;
    });
  }

  // sum_r weight[r] * sum_c (pred[r,c] - target[r,c])^2
  Var weighted_sq_error(Var pred, Tensor target, std::vector<double> row_weight) {
    const Tensor& pv = value(pred);
    require(pv.size() == target.size() && row_weight.size() == pv.rows(),
            "Tape::weighted_sq_error: shape mismatch");
    const std::size_t d = pv.cols();
    double s = 0.0;
    for (std::size_t r = 0; r < pv.rows(); ++r) {
      if (row_weight[r] == 0.0) continue;
      double rs = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double e = pv[r * d + c] - target[r * d + c];
        rs += e * e;
      }
      s += row_weight[r] * rs;
    }
    return record("weighted_sq_error", Tensor::scalar(s), {pred},
                  [pred, target = std::move(target), row_weight = std::move(row_weight)](Tape& t, const Tensor& g) {
      const Tensor& pv = t.value(pred);
      Tensor& gp = t.grad_of(pred);
      const std::size_t d = pv.cols();
      for (std::size_t r = 0; r < pv.rows(); ++r) {
        const double w = 2.0 * row_weight[r] * g[0];
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) gp[r * d + c] += w * (pv[r * d + c] - target[r * d + c]);
      }
    });
  }

  Var add_scalars(Var a, Var b) {
    require(value(a).size() == 1 && value(b).size() == 1, "Tape::add_scalars: scalars required");
    return record("add_scalars", Tensor::scalar(value(a)[0] + value(b)[0]), {a, b}, [a, b](Tape& t, const Tensor& g) {
      if (t.needs(a)) t.grad_of(a)[0] += g[0];
      if (t.needs(b)) t.grad_of(b)[0] += g[0];
    });
  }

  // Gradients of a scalar node with respect to every parameter on the tape.
  // Parameters the loss does not reach get zero gradients.
  std::map<std::string, Tensor> backprop(Var loss) {
    require(grad_enabled_, "Tape::backprop: tape recorded without gradients");
    require(value(loss).size() == 1, "Tape::backprop: loss must be a scalar, got " +
                                         shape_string(value(loss).shape()));
    for (std::size_t i = 0; i <= std::size_t(loss.id); ++i) {
      if (!nodes_[i].val().all_finite())
        throw NumericFailure("non-finite value at node #" + std::to_string(i) + " (" + nodes_[i].op + ")");
    }
    for (auto& n : nodes_) n.grad = Tensor();
    grad_of(loss)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[std::size_t(i)];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
    std::map<std::string, Tensor> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.param_name.empty()) continue;
      Tensor g = n.grad.empty() ? Tensor::zeros(n.val().shape()) : n.grad.reshaped(n.val().shape());
      if (!g.all_finite())
        throw NumericFailure("non-finite gradient for parameter " + n.param_name);
      auto [it, inserted] = out.try_emplace(n.param_name, std::move(g));
      if (!inserted) it->second += g;
    }
    return out;
  }

 private:
  using Backward = std::function<void(Tape&, const Tensor&)>;

  struct Node {
    std::string op;
    std::string param_name;
    const Tensor* ref = nullptr;
    Tensor own;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
    const Tensor& val() const { return ref ? *ref : own; }
  };

  const Node& node(Var v) const {
    require(v.id >= 0 && std::size_t(v.id) < nodes_.size(), "Tape: invalid Var");
    return nodes_[std::size_t(v.id)];
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
  }

  bool needs(Var v) const { return nodes_[std::size_t(v.id)].requires_grad; }

  Tensor& grad_of(Var v) {
    Node& n = nodes_[std::size_t(v.id)];
    if (n.grad.empty()) {
      const Tensor& val = n.val();
      n.grad = Tensor({val.rows(), val.cols()});
    }
    return n.grad;
  }

  static Tensor as_matrix(const Tensor& t) { return t.reshaped({t.rows(), t.cols()}); }

  static void check_group(const Tensor& x, const Tensor& g, std::size_t group, const char* op) {
    require(group > 0 && x.cols() == g.cols() && x.rows() == g.rows() * group,
            std::string("Tape::") + op + ": " + shape_string(x.shape()) + " vs " + shape_string(g.shape()));
  }

  Var record(const char* op, Tensor out, std::initializer_list<Var> inputs, Backward backward) {
    Node n;
    n.op = op;
    n.own = std::move(out);
    if (grad_enabled_) {
      for (Var in : inputs) n.requires_grad = n.requires_grad || needs(in);
      if (n.requires_grad) n.backward = std::move(backward);
    }
    return push(std::move(n));
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace redi
