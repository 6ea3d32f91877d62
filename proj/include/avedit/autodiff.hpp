#pragma once

// A small reverse-mode tape over dense Eigen matrices. Every op records its
// value and a closure that pushes the output gradient back to its parents.
// Networks are written once against these ops and get exact gradients in
// both float (training) and double (finite-difference checks).

#include "avedit/types.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace avedit::ad {

template <typename Scalar>
struct Parameter {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Parameter() = default;
  explicit Parameter(Matrix<Scalar> v) : value(std::move(v)) {}

  void zero_grad() { grad = Matrix<Scalar>::Zero(value.rows(), value.cols()); }
};

/// Named, ordered view over a module's parameters.
template <typename Scalar>
using ParameterList = std::vector<std::pair<std::string, Parameter<Scalar>*>>;

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Matrix<Scalar>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, int)>;

  /// With record_gradients = false no closures are stored; use for inference.
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<Scalar> constant(Mat value) { return push_node(std::move(value), false, nullptr); }

  /// Leaf whose gradient is added to `p.grad` by backward().
  Var<Scalar> parameter(Parameter<Scalar>& p) {
    Var<Scalar> v = push_node(p.value, record_, nullptr);
    if (record_) nodes_[static_cast<std::size_t>(v.id)].param = &p;
    return v;
  }

  /// Leaf whose gradient is read back through grad().
  Var<Scalar> variable(Mat value) { return push_node(std::move(value), record_, nullptr); }

  Var<Scalar> push(Mat value, std::initializer_list<int> parents, BackwardFn fn) {
    bool needs = false;
    if (record_)
      for (int p : parents) needs = needs || nodes_[static_cast<std::size_t>(p)].requires_grad;
    return push_node(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Mat& value(Var<Scalar> v) const { return value(v.id); }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Gradient of the last backward() target w.r.t. v (zero if unreached).
  Mat grad(Var<Scalar> v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  const Mat& upstream(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Reverse sweep from a 1x1 output. Parameter gradients are accumulated,
  /// not overwritten, so callers zero them between steps.
  void backward(Var<Scalar> output) {
    if (output.rows() != 1 || output.cols() != 1) throw ShapeError("backward() needs a scalar output");
    if (!record_) throw Error("backward() on a tape created without gradient recording");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[static_cast<std::size_t>(output.id)].requires_grad) return;
    nodes_[static_cast<std::size_t>(output.id)].grad = Mat::Ones(1, 1);
    for (int i = output.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<Scalar>* param = nullptr;
  };

  Var<Scalar> push_node(Mat value, bool requires_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementary ops

namespace detail {
inline void check(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}
}  // namespace detail

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Tape<S>& tp = *a.tape;
  const int ia = a.id, ib = b.id;
  return tp.push(a.value() * b.value(), {ia, ib}, [ia, ib](Tape<S>& t, int self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape<S>& tp = *a.tape;
  const int ia = a.id, ib = b.id;
  return tp.push(a.value() + b.value(), {ia, ib}, [ia, ib](Tape<S>& t, int self) {
    t.accumulate(ia, t.upstream(self));
    t.accumulate(ib, t.upstream(self));
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape<S>& tp = *a.tape;
  const int ia = a.id, ib = b.id;
  return tp.push(a.value() - b.value(), {ia, ib}, [ia, ib](Tape<S>& t, int self) {
    t.accumulate(ia, t.upstream(self));
    t.accumulate(ib, -t.upstream(self));
  });
}

template <typename S>
Var<S> scale(Var<S> a, S s) {
  Tape<S>& tp = *a.tape;
  const int ia = a.id;
  return tp.push(s * a.value(), {ia}, [ia, s](Tape<S>& t, int self) { t.accumulate(ia, s * t.upstream(self)); });
}

template <typename S>
Var<S> hadamard(Var<S> a, Var<S> b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shape mismatch");
  Tape<S>& tp = *a.tape;
  const int ia = a.id, ib = b.id;
  return tp.push(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape<S>& t, int self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

/// Multiplies by a constant gain matrix; used for attention hooks.
template <typename S>
Var<S> apply_gain(Var<S> a, Matrix<S> gain, Matrix<S> result) {
  Tape<S>& tp = *a.tape;
  const int ia = a.id;
  return tp.push(std::move(result), {ia}, [ia, gain = std::move(gain)](Tape<S>& t, int self) {
    t.accumulate(ia, t.upstream(self).cwiseProduct(gain));
  });
}

template <typename S>
Var<S> transpose(Var<S> a) {
  Tape<S>& tp = *a.tape;
  const int ia = a.id;
  return tp.push(a.value().transpose(), {ia},
                 [ia](Tape<S>& t, int self) { t.accumulate(ia, t.upstream(self).transpose()); });
}

/// x (N x d) + b (1 x d) broadcast over rows.
template <typename S>
Var<S> add_row_vector(Var<S> x, Var<S> b) {
  detail::check(b.rows() == 1 && b.cols() == x.cols(), "add_row_vector: bias shape mismatch");
  Tape<S>& tp = *x.tape;
  const int ix = x.id, ib = b.id;
  Matrix<S> out = x.value().rowwise() + b.value().row(0);
  return tp.push(std::move(out), {ix, ib}, [ix, ib](Tape<S>& t, int self) {
    t.accumulate(ix, t.upstream(self));
    if (t.requires_grad(ib)) t.accumulate(ib, t.upstream(self).colwise().sum());
  });
}

/// x (C x P) + b (C x 1) broadcast over columns.
template <typename S>
Var<S> add_col_vector(Var<S> x, Var<S> b) {
  detail::check(b.cols() == 1 && b.rows() == x.rows(), "add_col_vector: bias shape mismatch");
  Tape<S>& tp = *x.tape;
  const int ix = x.id, ib = b.id;
  Matrix<S> out = x.value().colwise() + b.value().col(0);
  return tp.push(std::move(out), {ix, ib}, [ix, ib](Tape<S>& t, int self) {
    t.accumulate(ix, t.upstream(self));
    if (t.requires_grad(ib)) t.accumulate(ib, t.upstream(self).rowwise().sum());
  });
}

/// x (N x d) * g (1 x d), column-wise gain.
template <typename S>
Var<S> mul_row_vector(Var<S> x, Var<S> g) {
  detail::check(g.rows() == 1 && g.cols() == x.cols(), "mul_row_vector: gain shape mismatch");
  Tape<S>& tp = *x.tape;
  const int ix = x.id, ig = g.id;
  Matrix<S> out = x.value().array().rowwise() * g.value().row(0).array();
  return tp.push(std::move(out), {ix, ig}, [ix, ig](Tape<S>& t, int self) {
    const auto& up = t.upstream(self);
    if (t.requires_grad(ix)) t.accumulate(ix, (up.array().rowwise() * t.value(ig).row(0).array()).matrix());
    if (t.requires_grad(ig)) t.accumulate(ig, up.cwiseProduct(t.value(ix)).colwise().sum());
  });
}

/// x (C x P) * g (C x 1), row-wise gain.
template <typename S>
Var<S> mul_col_vector(Var<S> x, Var<S> g) {
  detail::check(g.cols() == 1 && g.rows() == x.rows(), "mul_col_vector: gain shape mismatch");
  Tape<S>& tp = *x.tape;
  const int ix = x.id, ig = g.id;
  Matrix<S> out = x.value().array().colwise() * g.value().col(0).array();
  return tp.push(std::move(out), {ix, ig}, [ix, ig](Tape<S>& t, int self) {
    const auto& up = t.upstream(self);
    if (t.requires_grad(ix)) t.accumulate(ix, (up.array().colwise() * t.value(ig).col(0).array()).matrix());
    if (t.requires_grad(ig)) t.accumulate(ig, up.cwiseProduct(t.value(ix)).rowwise().sum());
  });
}

template <typename S>
Var<S> relu(Var<S> x) {
  Tape<S>& tp = *x.tape;
  const int ix = x.id;
  return tp.push(x.value().cwiseMax(S(0)), {ix}, [ix](Tape<S>& t, int self) {
    t.accumulate(ix, (t.value(ix).array() > S(0)).select(t.upstream(self).array(), S(0)).matrix());
  });
}

template <typename S>
Var<S> silu(Var<S> x) {
  Tape<S>& tp = *x.tape;
  const int ix = x.id;
  const auto& v = x.value();
  Matrix<S> sig = (S(1) + (-v.array()).exp()).inverse().matrix();
  Matrix<S> out = v.cwiseProduct(sig);
  return tp.push(std::move(out), {ix}, [ix, sig = std::move(sig)](Tape<S>& t, int self) {
    const auto& xv = t.value(ix).array();
    auto d = sig.array() * (S(1) + xv * (S(1) - sig.array()));
    t.accumulate(ix, (t.upstream(self).array() * d).matrix());
  });
}

template <typename S>
Var<S> softmax_rows(Var<S> x) {
  Tape<S>& tp = *x.tape;
  const int ix = x.id;
  const auto& v = x.value();
  Matrix<S> out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const S m = v.row(i).maxCoeff();
    out.row(i) = (v.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return tp.push(std::move(out), {ix}, [ix](Tape<S>& t, int self) {
    const auto& y = t.value(self);
    const auto& g = t.upstream(self);
    Matrix<S> dot = g.cwiseProduct(y).rowwise().sum();
    Matrix<S> dx = y.cwiseProduct(g - dot.replicate(1, g.cols()));
    t.accumulate(ix, dx);
  });
}

/// Vertical stack [a; b].
template <typename S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
  detail::check(a.cols() == b.cols(), "concat_rows: column mismatch");
  Tape<S>& tp = *a.tape;
  const int ia = a.id, ib = b.id;
  const Eigen::Index ra = a.rows(), rb = b.rows();
  Matrix<S> out(ra + rb, a.cols());
  out << a.value(), b.value();
  return tp.push(std::move(out), {ia, ib}, [ia, ib, ra, rb](Tape<S>& t, int self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.topRows(ra));
    if (t.requires_grad(ib)) t.accumulate(ib, g.bottomRows(rb));
  });
}

/// Horizontal stack [a, b].
template <typename S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  detail::check(a.rows() == b.rows(), "concat_cols: row mismatch");
  Tape<S>& tp = *a.tape;
  const int ia = a.id, ib = b.id;
  const Eigen::Index ca = a.cols(), cb = b.cols();
  Matrix<S> out(a.rows(), ca + cb);
  out << a.value(), b.value();
  return tp.push(std::move(out), {ia, ib}, [ia, ib, ca, cb](Tape<S>& t, int self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.leftCols(ca));
    if (t.requires_grad(ib)) t.accumulate(ib, g.rightCols(cb));
  });
}

/// Returns x with row `row` replaced by r (1 x d).
template <typename S>
Var<S> replace_row(Var<S> x, Eigen::Index row, Var<S> r) {
  detail::check(r.rows() == 1 && r.cols() == x.cols() && row >= 0 && row < x.rows(), "replace_row: bad shape");
  Tape<S>& tp = *x.tape;
  const int ix = x.id, ir = r.id;
  Matrix<S> out = x.value();
  out.row(row) = r.value().row(0);
  return tp.push(std::move(out), {ix, ir}, [ix, ir, row](Tape<S>& t, int self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(ix)) {
      Matrix<S> gx = g;
      gx.row(row).setZero();
      t.accumulate(ix, gx);
    }
    if (t.requires_grad(ir)) t.accumulate(ir, g.row(row));
  });
}

/// Returns x with r (1 x d) added to row `row`.
template <typename S>
Var<S> add_to_row(Var<S> x, Eigen::Index row, Var<S> r) {
  detail::check(r.rows() == 1 && r.cols() == x.cols() && row >= 0 && row < x.rows(), "add_to_row: bad shape");
  Tape<S>& tp = *x.tape;
  const int ix = x.id, ir = r.id;
  Matrix<S> out = x.value();
  out.row(row) += r.value().row(0);
  return tp.push(std::move(out), {ix, ir}, [ix, ir, row](Tape<S>& t, int self) {
    const auto& g = t.upstream(self);
    t.accumulate(ix, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.row(row));
  });
}

/// Normalizes disjoint blocks of x to zero mean and unit variance. With
/// by_rows = true each row is a block (layer norm over tokens); otherwise the
/// rows are split into `groups` contiguous bands, each normalized over all of
/// its entries (group norm over channels x positions).
template <typename S>
Var<S> normalize(Var<S> x, int groups, bool by_rows, S eps) {
  Tape<S>& tp = *x.tape;
  const int ix = x.id;
  const auto& v = x.value();
  const Eigen::Index rows = v.rows(), cols = v.cols();
  const Eigen::Index blocks = by_rows ? rows : groups;
  detail::check(by_rows || (groups > 0 && rows % groups == 0), "normalize: rows not divisible by groups");
  const Eigen::Index band = by_rows ? 1 : rows / groups;
  Matrix<S> out(rows, cols);
  Vector<S> inv_std(blocks);
  for (Eigen::Index b = 0; b < blocks; ++b) {
    auto blk = v.middleRows(b * band, band);
    const S n = static_cast<S>(blk.size());
    const S mean = blk.sum() / n;
    const S var = (blk.array() - mean).square().sum() / n;
    inv_std(b) = S(1) / std::sqrt(var + eps);
    out.middleRows(b * band, band) = ((blk.array() - mean) * inv_std(b)).matrix();
  }
  return tp.push(std::move(out), {ix}, [ix, band, blocks, inv_std = std::move(inv_std)](Tape<S>& t, int self) {
    const auto& y = t.value(self);
    const auto& g = t.upstream(self);
    Matrix<S> dx(g.rows(), g.cols());
    for (Eigen::Index b = 0; b < blocks; ++b) {
      auto gb = g.middleRows(b * band, band).array();
      auto yb = y.middleRows(b * band, band).array();
      const S n = static_cast<S>(gb.size());
      const S mg = gb.sum() / n;
      const S mgy = (gb * yb).sum() / n;
      dx.middleRows(b * band, band) = (inv_std(b) * (gb - mg - yb * mgy)).matrix();
    }
    t.accumulate(ix, dx);
  });
}

/// mean((a - b)^2) as a 1x1 value.
template <typename S>
Var<S> mean_squared_error(Var<S> a, Var<S> b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "mean_squared_error: shape mismatch");
  Tape<S>& tp = *a.tape;
  const int ia = a.id, ib = b.id;
  const S n = static_cast<S>(a.value().size());
  Matrix<S> out(1, 1);
  out(0, 0) = (a.value() - b.value()).squaredNorm() / n;
  return tp.push(std::move(out), {ia, ib}, [ia, ib, n](Tape<S>& t, int self) {
    const S g = t.upstream(self)(0, 0);
    Matrix<S> d = (S(2) * g / n) * (t.value(ia) - t.value(ib));
    if (t.requires_grad(ia)) t.accumulate(ia, d);
    if (t.requires_grad(ib)) t.accumulate(ib, -d);
  });
}

template <typename S>
Var<S> sum_squares(Var<S> a) {
  Tape<S>& tp = *a.tape;
  const int ia = a.id;
  Matrix<S> out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return tp.push(std::move(out), {ia}, [ia](Tape<S>& t, int self) {
    t.accumulate(ia, (S(2) * t.upstream(self)(0, 0)) * t.value(ia));
  });
}

// ---------------------------------------------------------------------------
// Spatial ops on feature maps laid out as (channels x height*width).

/// Zero-padded square convolution. w is (c_out x c_in*k*k) with column index
/// (ci*k + ky)*k + kx; b is (c_out x 1). Output spatial size is
/// ceil(h / stride) x ceil(w / stride) with padding k/2.
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> weight, Var<S> bias, int height, int width, int kernel, int stride, int& out_h,
              int& out_w) {
  const Eigen::Index c_in = x.rows();
  detail::check(x.cols() == static_cast<Eigen::Index>(height) * width, "conv2d: spatial size mismatch");
  detail::check(weight.cols() == c_in * kernel * kernel, "conv2d: weight/input channel mismatch");
  detail::check(bias.rows() == weight.rows() && bias.cols() == 1, "conv2d: bias shape mismatch");
  const int pad = kernel / 2;
  const int oh = (height + stride - 1) / stride;
  const int ow = (width + stride - 1) / stride;
  out_h = oh;
  out_w = ow;
  const Eigen::Index kk = static_cast<Eigen::Index>(kernel) * kernel;
  Matrix<S> cols = Matrix<S>::Zero(c_in * kk, static_cast<Eigen::Index>(oh) * ow);
  const auto& xv = x.value();
  for (Eigen::Index ci = 0; ci < c_in; ++ci)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        const Eigen::Index r = (ci * kernel + ky) * kernel + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ixx = ox * stride + kx - pad;
            if (ixx < 0 || ixx >= width) continue;
            cols(r, oy * ow + ox) = xv(ci, iy * width + ixx);
          }
        }
      }
  Matrix<S> out = weight.value() * cols;
  out.colwise() += bias.value().col(0);
  Tape<S>& tp = *x.tape;
  const int ix = x.id, iw = weight.id, ib = bias.id;
  return tp.push(std::move(out), {ix, iw, ib},
                 [=, cols = std::move(cols)](Tape<S>& t, int self) {
                   const auto& g = t.upstream(self);
                   if (t.requires_grad(iw)) t.accumulate(iw, g * cols.transpose());
                   if (t.requires_grad(ib)) t.accumulate(ib, g.rowwise().sum());
                   if (!t.requires_grad(ix)) return;
                   Matrix<S> dcols = t.value(iw).transpose() * g;
                   Matrix<S> dx = Matrix<S>::Zero(c_in, static_cast<Eigen::Index>(height) * width);
                   for (Eigen::Index ci = 0; ci < c_in; ++ci)
                     for (int ky = 0; ky < kernel; ++ky)
                       for (int kx = 0; kx < kernel; ++kx) {
                         const Eigen::Index r = (ci * kernel + ky) * kernel + kx;
                         for (int oy = 0; oy < oh; ++oy) {
                           const int iy = oy * stride + ky - pad;
                           if (iy < 0 || iy >= height) continue;
                           for (int ox = 0; ox < ow; ++ox) {
                             const int ixx = ox * stride + kx - pad;
                             if (ixx < 0 || ixx >= width) continue;
                             dx(ci, iy * width + ixx) += dcols(r, oy * ow + ox);
                           }
                         }
                       }
                   t.accumulate(ix, dx);
                 });
}

/// Nearest-neighbour 2x upsampling.
template <typename S>
Var<S> upsample2x(Var<S> x, int height, int width) {
  detail::check(x.cols() == static_cast<Eigen::Index>(height) * width, "upsample2x: spatial size mismatch");
  const int oh = 2 * height, ow = 2 * width;
  const auto& v = x.value();
  Matrix<S> out(v.rows(), static_cast<Eigen::Index>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int xx = 0; xx < ow; ++xx) out.col(y * ow + xx) = v.col((y / 2) * width + xx / 2);
  Tape<S>& tp = *x.tape;
  const int ix = x.id;
  return tp.push(std::move(out), {ix}, [=](Tape<S>& t, int self) {
    const auto& g = t.upstream(self);
    Matrix<S> dx = Matrix<S>::Zero(g.rows(), static_cast<Eigen::Index>(height) * width);
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) dx.col((y / 2) * width + xx / 2) += g.col(y * ow + xx);
    t.accumulate(ix, dx);
  });
}

}  // namespace avedit::ad
