// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef STYLEMOTION_AUTOGRAD_HPP_
#define STYLEMOTION_AUTOGRAD_HPP_

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stylemotion/error.hpp"

namespace stylemotion::ag {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// Named trainable matrix. Gradients are accumulated during Tape::backward;
// they are mutable so forward-only passes can share a const model.
template <typename S>
struct Param {
  std::string name;
  Mat<S> value;
  mutable Mat<S> grad;

  void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
};

template <typename S>
class ParamStore {
 public:
  Param<S>& add(const std::string& name, Mat<S> value) {
    if (by_name_.count(name))
      throw ConfigError("duplicate parameter: " + name);
    params_.push_back(Param<S>{name, std::move(value), {}});
    Param<S>& p = params_.back();
    p.zero_grad();
    by_name_[name] = &p;
    return p;
  }

  Param<S>* find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }
  const Param<S>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  std::deque<Param<S>>& all() { return params_; }
  const std::deque<Param<S>>& all() const { return params_; }

  void zero_grad() const {
    for (const auto& p : params_) p.zero_grad();
  }

  size_t count() const { return params_.size(); }
  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += static_cast<size_t>(p.value.size());
    return n;
  }

 private:
  std::deque<Param<S>> params_;  // deque keeps addresses stable
  std::unordered_map<std::string, Param<S>*> by_name_;
};

template <typename S>
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense matrices. Ops append nodes; backward walks
// the tape once in reverse, accumulating gradients into node slots and,
// for leaves bound to parameters, into Param::grad.
template <typename S>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}

  bool grad_enabled() const { return grad_; }
  size_t node_count() const { return nodes_.size(); }

  Var<S> constant(Mat<S> v) { return make(std::move(v), false); }

  Var<S> leaf(const Param<S>& p) {
    if (!grad_) return constant(p.value);
    const Param<S>* pp = &p;
    Var<S> out = make(p.value, true);
    set_bp(out, [pp](Tape&, const Mat<S>& g) {
      if (pp->grad.size() == 0)
        pp->grad.setZero(pp->value.rows(), pp->value.cols());
      pp->grad += g;
    });
    return out;
  }

  // Free-standing differentiable input; gradient read back via grad_of.
  Var<S> input(Mat<S> v) {
    if (!grad_) return constant(std::move(v));
    return make(std::move(v), true);
  }

  const Mat<S>& val(Var<S> v) const { return nodes_.at(v.id).val; }

  Mat<S> grad_of(Var<S> v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Mat<S>::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  void backward(Var<S> loss) {
    if (!grad_) throw ConfigError("backward on a no-grad tape");
    Node& ln = nodes_.at(loss.id);
    if (ln.val.rows() != 1 || ln.val.cols() != 1)
      throw ShapeError("backward requires a scalar loss");
    if (!ln.rg)
      throw ConfigError("loss does not depend on any differentiable input");
    ln.grad.setOnes(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.rg && n.bp && n.grad.size() != 0) n.bp(*this, n.grad);
    }
  }

  // ---------------------------------------------------------------- ops --

  Var<S> add(Var<S> a, Var<S> b) {
    check_same(a, b, "add");
    Var<S> out = make(val(a) + val(b), rg2(a, b));
    set_bp(out, [a, b](Tape& t, const Mat<S>& g) {
      t.acc(a, g);
      t.acc(b, g);
    });
    return out;
  }

  Var<S> sub(Var<S> a, Var<S> b) {
    check_same(a, b, "sub");
    Var<S> out = make(val(a) - val(b), rg2(a, b));
    set_bp(out, [a, b](Tape& t, const Mat<S>& g) {
      t.acc(a, g);
      t.acc(b, Mat<S>(-g));
    });
    return out;
  }

  Var<S> mul(Var<S> a, Var<S> b) {
    check_same(a, b, "mul");
    Var<S> out = make(val(a).cwiseProduct(val(b)), rg2(a, b));
    set_bp(out, [a, b](Tape& t, const Mat<S>& g) {
      t.acc(a, Mat<S>(g.cwiseProduct(t.val(b))));
      t.acc(b, Mat<S>(g.cwiseProduct(t.val(a))));
    });
    return out;
  }

  Var<S> scale(Var<S> a, S k) {
    Var<S> out = make(val(a) * k, rg1(a));
    set_bp(out, [a, k](Tape& t, const Mat<S>& g) { t.acc(a, Mat<S>(g * k)); });
    return out;
  }

  Var<S> add_scalar(Var<S> a, S k) {
    Var<S> out = make(Mat<S>((val(a).array() + k).matrix()), rg1(a));
    set_bp(out, [a](Tape& t, const Mat<S>& g) { t.acc(a, g); });
    return out;
  }

  Var<S> matmul(Var<S> a, Var<S> b) {
    if (val(a).cols() != val(b).rows())
      throw ShapeError("matmul inner dimensions differ");
    Var<S> out = make(val(a) * val(b), rg2(a, b));
    set_bp(out, [a, b](Tape& t, const Mat<S>& g) {
      t.acc(a, Mat<S>(g * t.val(b).transpose()));
      t.acc(b, Mat<S>(t.val(a).transpose() * g));
    });
    return out;
  }

  // A (m x k) times B^T where B is (n x k).
  Var<S> matmul_nt(Var<S> a, Var<S> b) {
    if (val(a).cols() != val(b).cols())
      throw ShapeError("matmul_nt inner dimensions differ");
    Var<S> out = make(val(a) * val(b).transpose(), rg2(a, b));
    set_bp(out, [a, b](Tape& t, const Mat<S>& g) {
      t.acc(a, Mat<S>(g * t.val(b)));
      t.acc(b, Mat<S>(g.transpose() * t.val(a)));
    });
    return out;
  }

  Var<S> add_rowvec(Var<S> a, Var<S> b) {
    if (val(b).rows() != 1 || val(b).cols() != val(a).cols())
      throw ShapeError("add_rowvec needs a 1 x cols vector");
    Mat<S> v = val(a);
    v.rowwise() += val(b).row(0);
    Var<S> out = make(std::move(v), rg2(a, b));
    set_bp(out, [a, b](Tape& t, const Mat<S>& g) {
      t.acc(a, g);
      t.acc(b, Mat<S>(g.colwise().sum()));
    });
    return out;
  }

  Var<S> mul_rowvec(Var<S> a, Var<S> b) {
    if (val(b).rows() != 1 || val(b).cols() != val(a).cols())
      throw ShapeError("mul_rowvec needs a 1 x cols vector");
    Mat<S> v = val(a);
    v.array().rowwise() *= val(b).row(0).array();
    Var<S> out = make(std::move(v), rg2(a, b));
    set_bp(out, [a, b](Tape& t, const Mat<S>& g) {
      Mat<S> ga = g;
      ga.array().rowwise() *= t.val(b).row(0).array();
      t.acc(a, ga);
      t.acc(b, Mat<S>(g.cwiseProduct(t.val(a)).colwise().sum()));
    });
    return out;
  }

  Var<S> mean_rows(Var<S> a) {
    const auto rows = val(a).rows();
    if (rows < 1) throw ShapeError("mean_rows on empty matrix");
    Var<S> out = make(Mat<S>(val(a).colwise().mean()), rg1(a));
    set_bp(out, [a, rows](Tape& t, const Mat<S>& g) {
      t.acc(a, Mat<S>(g.replicate(rows, 1) / static_cast<S>(rows)));
    });
    return out;
  }

  Var<S> mean_all(Var<S> a) {
    const S n = static_cast<S>(val(a).size());
    if (n < 1) throw ShapeError("mean_all on empty matrix");
    Mat<S> v(1, 1);
    v(0, 0) = val(a).sum() / n;
    const auto rows = val(a).rows(), cols = val(a).cols();
    Var<S> out = make(std::move(v), rg1(a));
    set_bp(out, [a, n, rows, cols](Tape& t, const Mat<S>& g) {
      t.acc(a, Mat<S>(Mat<S>::Constant(rows, cols, g(0, 0) / n)));
    });
    return out;
  }

  Var<S> slice_rows(Var<S> a, int r0, int n) {
    if (r0 < 0 || n < 0 || r0 + n > val(a).rows())
      throw ShapeError("slice_rows out of range");
    Var<S> out = make(Mat<S>(val(a).middleRows(r0, n)), n > 0 && rg1(a));
    set_bp(out, [a, r0, n](Tape& t, const Mat<S>& g) {
      Mat<S> ga = Mat<S>::Zero(t.val(a).rows(), t.val(a).cols());
      ga.middleRows(r0, n) = g;
      t.acc(a, ga);
    });
    return out;
  }

  Var<S> slice_cols(Var<S> a, int c0, int n) {
    if (c0 < 0 || n < 0 || c0 + n > val(a).cols())
      throw ShapeError("slice_cols out of range");
    Var<S> out = make(Mat<S>(val(a).middleCols(c0, n)), n > 0 && rg1(a));
    set_bp(out, [a, c0, n](Tape& t, const Mat<S>& g) {
      Mat<S> ga = Mat<S>::Zero(t.val(a).rows(), t.val(a).cols());
      ga.middleCols(c0, n) = g;
      t.acc(a, ga);
    });
    return out;
  }

  Var<S> concat_rows(const std::vector<Var<S>>& parts) {
    std::vector<Var<S>> keep;
    for (Var<S> p : parts)
      if (val(p).rows() > 0) keep.push_back(p);
    if (keep.empty()) throw ShapeError("concat_rows of empty parts");
    const auto cols = val(keep[0]).cols();
    Eigen::Index rows = 0;
    bool rg = false;
    for (Var<S> p : keep) {
      if (val(p).cols() != cols)
        throw ShapeError("concat_rows column mismatch");
      rows += val(p).rows();
      rg = rg || node(p).rg;
    }
    Mat<S> v(rows, cols);
    Eigen::Index r = 0;
    for (Var<S> p : keep) {
      v.middleRows(r, val(p).rows()) = val(p);
      r += val(p).rows();
    }
    Var<S> out = make(std::move(v), rg);
    set_bp(out, [keep](Tape& t, const Mat<S>& g) {
      Eigen::Index r = 0;
      for (Var<S> p : keep) {
        t.acc(p, Mat<S>(g.middleRows(r, t.val(p).rows())));
        r += t.val(p).rows();
      }
    });
    return out;
  }

  Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of empty parts");
    const auto rows = val(parts[0]).rows();
    Eigen::Index cols = 0;
    bool rg = false;
    for (Var<S> p : parts) {
      if (val(p).rows() != rows) throw ShapeError("concat_cols row mismatch");
      cols += val(p).cols();
      rg = rg || node(p).rg;
    }
    Mat<S> v(rows, cols);
    Eigen::Index c = 0;
    for (Var<S> p : parts) {
      v.middleCols(c, val(p).cols()) = val(p);
      c += val(p).cols();
    }
    Var<S> out = make(std::move(v), rg);
    set_bp(out, [parts](Tape& t, const Mat<S>& g) {
      Eigen::Index c = 0;
      for (Var<S> p : parts) {
        t.acc(p, Mat<S>(g.middleCols(c, t.val(p).cols())));
        c += t.val(p).cols();
      }
    });
    return out;
  }

  Var<S> relu(Var<S> a) {
    Var<S> out = make(val(a).cwiseMax(S(0)), rg1(a));
    set_bp(out, [a](Tape& t, const Mat<S>& g) {
      const auto mask = (t.val(a).array() > S(0)).template cast<S>();
      t.acc(a, Mat<S>((mask * g.array()).matrix()));
    });
    return out;
  }

  static S gauss_cdf(S v) {
    return S(0.5) * (S(1) + std::erf(v / S(M_SQRT2)));
  }

  Var<S> gelu(Var<S> a) {
    const auto x = val(a).array();
    Mat<S> v = (x * x.unaryExpr(&Tape::gauss_cdf)).matrix();
    Var<S> out = make(std::move(v), rg1(a));
    set_bp(out, [a](Tape& t, const Mat<S>& g) {
      const auto x = t.val(a).array();
      const auto cdf = x.unaryExpr(&Tape::gauss_cdf);
      const auto pdf =
          (-S(0.5) * x * x).exp() * S(1.0 / std::sqrt(2.0 * M_PI));
      t.acc(a, Mat<S>(((cdf + x * pdf) * g.array()).matrix()));
    });
    return out;
  }

  Var<S> tanh_op(Var<S> a) {
    Mat<S> v = val(a).array().tanh().matrix();
    Var<S> out = make(std::move(v), rg1(a));
    set_bp(out, [a, out](Tape& t, const Mat<S>& g) {
      const auto y = t.val(out).array();
      t.acc(a, Mat<S>(((S(1) - y * y) * g.array()).matrix()));
    });
    return out;
  }

  // Per-row standardization with population variance; no affine part.
  Var<S> layer_norm_rows(Var<S> a, S eps) {
    const Mat<S>& x = val(a);
    if (x.cols() < 1) throw ShapeError("layer_norm on empty rows");
    const S cols = static_cast<S>(x.cols());
    Mat<S> mu = x.rowwise().mean();
    Mat<S> centered = x;
    centered.colwise() -= mu.col(0);
    Mat<S> var = centered.cwiseProduct(centered).rowwise().sum() / cols;
    Mat<S> istd = (var.array() + eps).rsqrt().matrix();
    Mat<S> y = centered;
    y.array().colwise() *= istd.col(0).array();
    Var<S> out = make(std::move(y), rg1(a));
    set_bp(out, [a, out, istd](Tape& t, const Mat<S>& g) {
      const Mat<S>& y = t.val(out);
      const S cols = static_cast<S>(y.cols());
      Mat<S> gmean = g.rowwise().mean();
      Mat<S> gymean = g.cwiseProduct(y).rowwise().sum() / cols;
      Mat<S> dx = g;
      dx.colwise() -= gmean.col(0);
      Mat<S> proj = y;
      proj.array().colwise() *= gymean.col(0).array();
      dx -= proj;
      dx.array().colwise() *= istd.col(0).array();
      t.acc(a, dx);
    });
    return out;
  }

  // Per-column (per-channel over time) standardization, population variance.
  Var<S> instance_norm_cols(Var<S> a, S eps) {
    const Mat<S>& x = val(a);
    if (x.rows() < 2) throw ShapeError("instance norm needs at least 2 frames");
    const S rows = static_cast<S>(x.rows());
    Mat<S> mu = x.colwise().mean();
    Mat<S> centered = x;
    centered.rowwise() -= mu.row(0);
    Mat<S> var = centered.cwiseProduct(centered).colwise().sum() / rows;
    Mat<S> istd = (var.array() + eps).rsqrt().matrix();
    Mat<S> y = centered;
    y.array().rowwise() *= istd.row(0).array();
    Var<S> out = make(std::move(y), rg1(a));
    set_bp(out, [a, out, istd](Tape& t, const Mat<S>& g) {
      const Mat<S>& y = t.val(out);
      const S rows = static_cast<S>(y.rows());
      Mat<S> gmean = g.colwise().mean();
      Mat<S> gymean = g.cwiseProduct(y).colwise().sum() / rows;
      Mat<S> dx = g;
      dx.rowwise() -= gmean.row(0);
      Mat<S> proj = y;
      proj.array().rowwise() *= gymean.row(0).array();
      dx -= proj;
      dx.array().rowwise() *= istd.row(0).array();
      t.acc(a, dx);
    });
    return out;
  }

  Var<S> softmax_rows(Var<S> a) {
    const Mat<S>& x = val(a);
    Mat<S> y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const S m = x.row(r).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(r).array() - m).exp();
      y.row(r) = (e / e.sum()).matrix();
    }
    Var<S> out = make(std::move(y), rg1(a));
    set_bp(out, [a, out](Tape& t, const Mat<S>& g) {
      const Mat<S>& y = t.val(out);
      Mat<S> dot = g.cwiseProduct(y).rowwise().sum();
      Mat<S> shifted = g;
      shifted.colwise() -= dot.col(0);
      t.acc(a, Mat<S>(y.cwiseProduct(shifted)));
    });
    return out;
  }

  // Square causal softmax: row i is a softmax over columns 0..i, the rest
  // are exactly zero.
  Var<S> softmax_rows_causal(Var<S> a) {
    const Mat<S>& x = val(a);
    if (x.rows() != x.cols())
      throw ShapeError("causal softmax requires a square matrix");
    Mat<S> y = Mat<S>::Zero(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const auto seg = x.row(r).head(r + 1);
      const S m = seg.maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (seg.array() - m).exp();
      y.row(r).head(r + 1) = (e / e.sum()).matrix();
    }
    Var<S> out = make(std::move(y), rg1(a));
    set_bp(out, [a, out](Tape& t, const Mat<S>& g) {
      const Mat<S>& y = t.val(out);
      Mat<S> dx = Mat<S>::Zero(y.rows(), y.cols());
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const auto yr = y.row(r).head(r + 1).array();
        const auto gr = g.row(r).head(r + 1).array();
        const S dot = (yr * gr).sum();
        dx.row(r).head(r + 1) = (yr * (gr - dot)).matrix();
      }
      t.acc(a, dx);
    });
    return out;
  }

  // 1-D convolution over rows (time) via im2col. x is L x Cin, weight is
  // (Cin * k) x Cout with row index c * k + j, bias optional 1 x Cout.
  Var<S> conv1d(Var<S> x, Var<S> w, Var<S> b, int k, int stride, int pad) {
    const Mat<S>& xv = val(x);
    const int L = static_cast<int>(xv.rows());
    const int cin = static_cast<int>(xv.cols());
    if (val(w).rows() != static_cast<Eigen::Index>(cin) * k)
      throw ShapeError("conv1d weight rows must be cin * k");
    if (stride < 1 || pad < 0 || k < 1)
      throw ConfigError("bad conv1d geometry");
    if (L + 2 * pad < k) throw ShapeError("conv1d input shorter than kernel");
    const int lout = (L + 2 * pad - k) / stride + 1;

    Mat<S> patches = Mat<S>::Zero(lout, static_cast<Eigen::Index>(cin) * k);
    for (int r = 0; r < lout; ++r)
      for (int j = 0; j < k; ++j) {
        const int src = r * stride + j - pad;
        if (src < 0 || src >= L) continue;
        for (int c = 0; c < cin; ++c)
          patches(r, static_cast<Eigen::Index>(c) * k + j) = xv(src, c);
      }

    Mat<S> v = patches * val(w);
    if (b.valid()) {
      if (val(b).rows() != 1 || val(b).cols() != v.cols())
        throw ShapeError("conv1d bias must be 1 x cout");
      v.rowwise() += val(b).row(0);
    }
    const bool rg = rg1(x) || rg1(w) || (b.valid() && rg1(b));
    Var<S> out = make(std::move(v), rg);
    set_bp(out, [x, w, b, k, stride, pad, L, cin,
                 patches](Tape& t, const Mat<S>& g) {
      t.acc(w, Mat<S>(patches.transpose() * g));
      if (b.valid()) t.acc(b, Mat<S>(g.colwise().sum()));
      if (t.node(x).rg) {
        Mat<S> gp = g * t.val(w).transpose();
        Mat<S> gx = Mat<S>::Zero(L, cin);
        for (int r = 0; r < gp.rows(); ++r)
          for (int j = 0; j < k; ++j) {
            const int src = r * stride + j - pad;
            if (src < 0 || src >= L) continue;
            for (int c = 0; c < cin; ++c)
              gx(src, c) += gp(r, static_cast<Eigen::Index>(c) * k + j);
          }
        t.acc(x, gx);
      }
    });
    return out;
  }

  // Mean cross-entropy of row-wise softmax against integer labels.
  Var<S> cross_entropy_rows(Var<S> logits, const std::vector<int>& labels) {
    const Mat<S>& x = val(logits);
    if (static_cast<Eigen::Index>(labels.size()) != x.rows())
      throw ShapeError("one label per row required");
    for (int l : labels)
      if (l < 0 || l >= x.cols())
        throw ConfigError("label out of range: " + std::to_string(l));
    const S bs = static_cast<S>(x.rows());
    Mat<S> probs(x.rows(), x.cols());
    S total = 0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const S m = x.row(r).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(r).array() - m).exp();
      const S z = e.sum();
      probs.row(r) = (e / z).matrix();
      total += std::log(z) + m - x(r, labels[static_cast<size_t>(r)]);
    }
    Mat<S> v(1, 1);
    v(0, 0) = total / bs;
    Var<S> out = make(std::move(v), rg1(logits));
    set_bp(out, [logits, probs, labels, bs](Tape& t, const Mat<S>& g) {
      Mat<S> dx = probs;
      for (Eigen::Index r = 0; r < dx.rows(); ++r)
        dx(r, labels[static_cast<size_t>(r)]) -= S(1);
      t.acc(logits, Mat<S>(dx * (g(0, 0) / bs)));
    });
    return out;
  }

  // Row-wise x / max(||x||, eps).
  Var<S> normalize_rows(Var<S> a, S eps) {
    const Mat<S>& x = val(a);
    Mat<S> y(x.rows(), x.cols());
    std::vector<S> norms(static_cast<size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const S n = x.row(r).norm();
      norms[static_cast<size_t>(r)] = n;
      y.row(r) = x.row(r) / std::max(n, eps);
    }
    Var<S> out = make(std::move(y), rg1(a));
    set_bp(out, [a, out, norms, eps](Tape& t, const Mat<S>& g) {
      const Mat<S>& y = t.val(out);
      Mat<S> dx(y.rows(), y.cols());
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const S n = norms[static_cast<size_t>(r)];
        if (n > eps) {
          const S dot = g.row(r).dot(y.row(r));
          dx.row(r) = (g.row(r) - y.row(r) * dot) / n;
        } else {
          dx.row(r) = g.row(r) / eps;
        }
      }
      t.acc(a, dx);
    });
    return out;
  }

  // Cosine similarity of two row vectors; denominator max(||a||*||b||, eps).
  Var<S> cosine_pair(Var<S> a, Var<S> b, S eps) {
    const Mat<S>& av = val(a);
    const Mat<S>& bv = val(b);
    if (av.rows() != 1 || bv.rows() != 1 || av.cols() != bv.cols())
      throw ShapeError("cosine_pair needs two equal-length row vectors");
    const S na = av.norm(), nb = bv.norm();
    const S den = std::max(na * nb, eps);
    Mat<S> v(1, 1);
    v(0, 0) = av.row(0).dot(bv.row(0)) / den;
    const S c = v(0, 0);
    Var<S> out = make(std::move(v), rg2(a, b));
    set_bp(out, [a, b, na, nb, den, c, eps](Tape& t, const Mat<S>& g) {
      const Mat<S>& av = t.val(a);
      const Mat<S>& bv = t.val(b);
      const S gs = g(0, 0);
      if (na * nb > eps) {
        t.acc(a, Mat<S>(gs * (bv / den - c * av / (na * na))));
        t.acc(b, Mat<S>(gs * (av / den - c * bv / (nb * nb))));
      } else {
        t.acc(a, Mat<S>(gs * bv / eps));
        t.acc(b, Mat<S>(gs * av / eps));
      }
    });
    return out;
  }

  // Gradient reversal: identity forward, gradient scaled by -lambda.
  Var<S> grl(Var<S> a, S lambda) {
    Var<S> out = make(val(a), rg1(a));
    set_bp(out, [a, lambda](Tape& t, const Mat<S>& g) {
      t.acc(a, Mat<S>(g * (-lambda)));
    });
    return out;
  }

  Var<S> exp_op(Var<S> a) {
    Mat<S> v = val(a).array().exp().matrix();
    Var<S> out = make(std::move(v), rg1(a));
    set_bp(out, [a, out](Tape& t, const Mat<S>& g) {
      t.acc(a, Mat<S>(g.cwiseProduct(t.val(out))));
    });
    return out;
  }

  Var<S> clamp(Var<S> a, S lo, S hi) {
    Var<S> out = make(val(a).cwiseMax(lo).cwiseMin(hi), rg1(a));
    set_bp(out, [a, lo, hi](Tape& t, const Mat<S>& g) {
      const auto x = t.val(a).array();
      const auto inside = ((x > lo) && (x < hi)).template cast<S>();
      t.acc(a, Mat<S>((inside * g.array()).matrix()));
    });
    return out;
  }

  Var<S> recip(Var<S> a) {
    Mat<S> v = val(a).array().inverse().matrix();
    Var<S> out = make(std::move(v), rg1(a));
    set_bp(out, [a, out](Tape& t, const Mat<S>& g) {
      const auto y = t.val(out).array();
      t.acc(a, Mat<S>((-(y * y) * g.array()).matrix()));
    });
    return out;
  }

  // Elementwise product with a 1x1 variable.
  Var<S> mul_scalarvar(Var<S> a, Var<S> s) {
    if (val(s).rows() != 1 || val(s).cols() != 1)
      throw ShapeError("mul_scalarvar needs a 1x1 scalar");
    Var<S> out = make(Mat<S>(val(a) * val(s)(0, 0)), rg2(a, s));
    set_bp(out, [a, s](Tape& t, const Mat<S>& g) {
      t.acc(a, Mat<S>(g * t.val(s)(0, 0)));
      Mat<S> gs(1, 1);
      gs(0, 0) = g.cwiseProduct(t.val(a)).sum();
      t.acc(s, gs);
    });
    return out;
  }

  Var<S> detach(Var<S> a) { return constant(val(a)); }

  // Mean squared error over all entries.
  Var<S> mse(Var<S> a, Var<S> b) {
    Var<S> d = sub(a, b);
    return mean_all(mul(d, d));
  }

 private:
  struct Node {
    Mat<S> val;
    Mat<S> grad;
    bool rg = false;
    std::function<void(Tape&, const Mat<S>&)> bp;
  };

  std::vector<Node> nodes_;
  bool grad_;

  Node& node(Var<S> v) { return nodes_.at(v.id); }
  const Node& node(Var<S> v) const { return nodes_.at(v.id); }
  bool rg1(Var<S> a) const { return node(a).rg; }
  bool rg2(Var<S> a, Var<S> b) const { return node(a).rg || node(b).rg; }

  void check_same(Var<S> a, Var<S> b, const char* what) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw ShapeError(std::string(what) + " shape mismatch");
  }

  Var<S> make(Mat<S> v, bool rg) {
    Node n;
    n.val = std::move(v);
    n.rg = grad_ && rg;
    nodes_.push_back(std::move(n));
    return Var<S>{static_cast<int>(nodes_.size()) - 1};
  }

  template <typename F>
  void set_bp(Var<S> v, F&& fn) {
    Node& n = node(v);
    if (n.rg) n.bp = std::forward<F>(fn);
  }

  void acc(Var<S> v, const Mat<S>& g) {
    Node& n = node(v);
    if (!n.rg) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }
};

}  // namespace stylemotion::ag

#endif  // STYLEMOTION_AUTOGRAD_HPP_
