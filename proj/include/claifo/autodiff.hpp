#pragma once

// Reverse-mode autodiff on a tape of dense matrices. Small by design: exactly
// the operations the training losses need, each with a hand-written backward.
// Everything is templated on the scalar so training runs in float while
// finite-difference audits instantiate the same graph in double.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "claifo/check.hpp"

namespace claifo {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A named, trainable tensor. Lives outside any tape; tapes borrow it.
template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;

  Param() = default;
  Param(std::string n, Mat<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat<T>::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

struct Conv2dSpec {
  int in_c, in_h, in_w;
  int out_c, k, stride;

  int out_h() const { return (in_h - k) / stride + 1; }
  int out_w() const { return (in_w - k) / stride + 1; }
  void validate() const {
    require(in_c > 0 && in_h >= k && in_w >= k && out_c > 0 && k > 0 && stride > 0,
            "bad conv spec");
  }
};

template <typename T>
class Tape {
 public:
  struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves -----------------------------------------------------------

  Var constant(Mat<T> v) { return push(std::move(v), false, {}); }

  // Binds a parameter into the graph. If trainable, backward accumulates
  // into p.grad; a frozen binding contributes values only (stop-gradient).
  Var param(Param<T>& p, bool trainable = true) {
    if (!trainable) return push(p.value, false, {});
    Param<T>* pp = &p;
    Var out = push(p.value, true, {});
    const int i = out.i;
    nodes_[i].bw = [this, i, pp] { pp->grad += nodes_[i].grad; };
    return out;
  }

  // --- arithmetic ---------------------------------------------------------

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    Var out = push(val(a) + val(b), needs(a) || needs(b), {});
    binop_bw(out, a, b, [this](int o, int ia, int ib) {
      if (wants(ia)) gref(ia) += nodes_[o].grad;
      if (wants(ib)) gref(ib) += nodes_[o].grad;
    });
    return out;
  }

  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    Var out = push(val(a) - val(b), needs(a) || needs(b), {});
    binop_bw(out, a, b, [this](int o, int ia, int ib) {
      if (wants(ia)) gref(ia) += nodes_[o].grad;
      if (wants(ib)) gref(ib) -= nodes_[o].grad;
    });
    return out;
  }

  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    Var out = push(val(a).cwiseProduct(val(b)), needs(a) || needs(b), {});
    binop_bw(out, a, b, [this](int o, int ia, int ib) {
      if (wants(ia)) gref(ia) += nodes_[o].grad.cwiseProduct(nodes_[ib].val);
      if (wants(ib)) gref(ib) += nodes_[o].grad.cwiseProduct(nodes_[ia].val);
    });
    return out;
  }

  // Elementwise minimum; ties route the gradient to `a`.
  Var min_elem(Var a, Var b) {
    same_shape(a, b, "min_elem");
    Var out = push(val(a).cwiseMin(val(b)), needs(a) || needs(b), {});
    binop_bw(out, a, b, [this](int o, int ia, int ib) {
      const Mat<T>& g = nodes_[o].grad;
      const Mat<T> pick_a =
          (nodes_[ia].val.array() <= nodes_[ib].val.array()).template cast<T>().matrix();
      if (wants(ia)) gref(ia) += g.cwiseProduct(pick_a);
      if (wants(ib)) gref(ib) += g - g.cwiseProduct(pick_a);
    });
    return out;
  }

  Var scale(Var a, T c) {
    Var out = push(val(a) * c, needs(a), {});
    unop_bw(out, a, [this, c](int o, int ia) { gref(ia) += nodes_[o].grad * c; });
    return out;
  }

  Var add_scalar(Var a, T c) {
    Var out = push((val(a).array() + c).matrix(), needs(a), {});
    unop_bw(out, a, [this](int o, int ia) { gref(ia) += nodes_[o].grad; });
    return out;
  }

  Var add_constmat(Var a, const Mat<T>& c) {
    require(val(a).rows() == c.rows() && val(a).cols() == c.cols(), "add_constmat shape");
    Var out = push(val(a) + c, needs(a), {});
    unop_bw(out, a, [this](int o, int ia) { gref(ia) += nodes_[o].grad; });
    return out;
  }

  Var mul_constmat(Var a, Mat<T> c) {
    require(val(a).rows() == c.rows() && val(a).cols() == c.cols(), "mul_constmat shape");
    Var out = push(val(a).cwiseProduct(c), needs(a), {});
    unop_bw(out, a, [this, c = std::move(c)](int o, int ia) {
      gref(ia) += nodes_[o].grad.cwiseProduct(c);
    });
    return out;
  }

  Var neg(Var a) { return scale(a, T(-1)); }

  // --- matrix products ------------------------------------------------------

  Var matmul(Var a, Var b) {
    require(val(a).cols() == val(b).rows(), "matmul: inner dims");
    Var out = push(val(a) * val(b), needs(a) || needs(b), {});
    binop_bw(out, a, b, [this](int o, int ia, int ib) {
      if (wants(ia)) gref(ia) += nodes_[o].grad * nodes_[ib].val.transpose();
      if (wants(ib)) gref(ib) += nodes_[ia].val.transpose() * nodes_[o].grad;
    });
    return out;
  }

  // A · Bᵀ — the shape a linear layer wants when weights are (out × in).
  Var matmul_nt(Var a, Var b) {
    require(val(a).cols() == val(b).cols(), "matmul_nt: inner dims");
    Var out = push(val(a) * val(b).transpose(), needs(a) || needs(b), {});
    binop_bw(out, a, b, [this](int o, int ia, int ib) {
      if (wants(ia)) gref(ia) += nodes_[o].grad * nodes_[ib].val;
      if (wants(ib)) gref(ib) += nodes_[o].grad.transpose() * nodes_[ia].val;
    });
    return out;
  }

  // Broadcast a (1 × M) row over all rows of a (N × M) matrix.
  Var add_rowvec(Var a, Var v) {
    require(val(v).rows() == 1 && val(v).cols() == val(a).cols(), "add_rowvec shape");
    Var out = push(val(a).rowwise() + val(v).row(0), needs(a) || needs(v), {});
    binop_bw(out, a, v, [this](int o, int ia, int iv) {
      if (wants(ia)) gref(ia) += nodes_[o].grad;
      if (wants(iv)) gref(iv) += nodes_[o].grad.colwise().sum();
    });
    return out;
  }

  Var linear(Var x, Var w, Var b) { return add_rowvec(matmul_nt(x, w), b); }

  // --- elementwise nonlinearities --------------------------------------------

  Var relu(Var a) {
    Var out = push(val(a).cwiseMax(T(0)), needs(a), {});
    unop_bw(out, a, [this](int o, int ia) {
      gref(ia) += nodes_[o]
                      .grad.cwiseProduct((nodes_[ia].val.array() > T(0)).template cast<T>().matrix());
    });
    return out;
  }

  Var tanh_(Var a) {
    Var out = push(val(a).array().tanh().matrix(), needs(a), {});
    // sech²(x) from the stored input: 1−tanh²(x) on the rounded output
    // underflows to exactly zero once |x| > ~9 in float, permanently freezing
    // saturated units; the direct form stays nonzero far deeper.
    unop_bw(out, a, [this](int o, int ia) {
      const auto sech = nodes_[ia].val.array().cosh().inverse();
      gref(ia) += nodes_[o].grad.cwiseProduct((sech * sech).matrix());
    });
    return out;
  }

  Var sigmoid(Var a) {
    Mat<T> s = val(a).unaryExpr([](T x) {
      return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
    });
    Var out = push(std::move(s), needs(a), {});
    unop_bw(out, a, [this](int o, int ia) {
      const auto& y = nodes_[o].val.array();
      gref(ia) += nodes_[o].grad.cwiseProduct((y * (T(1) - y)).matrix());
    });
    return out;
  }

  // log(1 + eˣ), computed stably; derivative is the sigmoid.
  Var softplus(Var a) {
    Mat<T> s = val(a).unaryExpr(
        [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); });
    Var out = push(std::move(s), needs(a), {});
    unop_bw(out, a, [this](int o, int ia) {
      const Mat<T> sig = nodes_[ia].val.unaryExpr([](T x) {
        return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
      });
      gref(ia) += nodes_[o].grad.cwiseProduct(sig);
    });
    return out;
  }

  Var exp_(Var a) {
    Var out = push(val(a).array().exp().matrix(), needs(a), {});
    unop_bw(out, a, [this](int o, int ia) {
      gref(ia) += nodes_[o].grad.cwiseProduct(nodes_[o].val);
    });
    return out;
  }

  Var log_(Var a) {
    Var out = push(val(a).array().log().matrix(), needs(a), {});
    unop_bw(out, a, [this](int o, int ia) {
      gref(ia) += nodes_[o].grad.cwiseQuotient(nodes_[ia].val);
    });
    return out;
  }

  Var square(Var a) {
    Var out = push(val(a).array().square().matrix(), needs(a), {});
    unop_bw(out, a, [this](int o, int ia) {
      gref(ia) += T(2) * nodes_[o].grad.cwiseProduct(nodes_[ia].val);
    });
    return out;
  }

  // --- reductions ------------------------------------------------------------

  Var sum(Var a) {
    Mat<T> s(1, 1);
    s(0, 0) = val(a).sum();
    Var out = push(std::move(s), needs(a), {});
    unop_bw(out, a, [this](int o, int ia) {
      gref(ia).array() += nodes_[o].grad(0, 0);
    });
    return out;
  }

  Var mean(Var a) {
    const T n = static_cast<T>(val(a).size());
    Mat<T> s(1, 1);
    s(0, 0) = val(a).sum() / n;
    Var out = push(std::move(s), needs(a), {});
    unop_bw(out, a, [this, n](int o, int ia) {
      gref(ia).array() += nodes_[o].grad(0, 0) / n;
    });
    return out;
  }

  Var row_sum(Var a) {
    Mat<T> s = val(a).rowwise().sum();
    Var out = push(std::move(s), needs(a), {});
    unop_bw(out, a, [this](int o, int ia) {
      gref(ia) += nodes_[o].grad * Mat<T>::Ones(1, nodes_[ia].val.cols());
    });
    return out;
  }

  // Stable per-row log-sum-exp: (N × M) → (N × 1).
  Var row_logsumexp(Var a) {
    const Mat<T>& x = val(a);
    Mat<T> out(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T m = x.row(r).maxCoeff();
      out(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
    }
    Var o = push(std::move(out), needs(a), {});
    unop_bw(o, a, [this](int io, int ia) {
      const Mat<T>& x = nodes_[ia].val;
      const Mat<T>& y = nodes_[io].val;
      const Mat<T>& g = nodes_[io].grad;
      Mat<T>& dx = gref(ia);
      for (Eigen::Index r = 0; r < x.rows(); ++r)
        dx.row(r) += g(r, 0) * (x.row(r).array() - y(r, 0)).exp().matrix();
    });
    return o;
  }

  // Rows scaled to unit L2 norm (with eps for the zero row).
  Var row_l2_normalize(Var a, T eps = T(1e-12)) {
    const Mat<T>& x = val(a);
    Mat<T> norms = (x.rowwise().norm().array() + eps).matrix();
    Mat<T> y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) y.row(r) = x.row(r) / norms(r, 0);
    Var out = push(std::move(y), needs(a), {});
    unop_bw(out, a, [this, norms = std::move(norms)](int o, int ia) {
      const Mat<T>& y = nodes_[o].val;
      const Mat<T>& g = nodes_[o].grad;
      Mat<T>& dx = gref(ia);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const T dot = y.row(r).dot(g.row(r));
        dx.row(r) += (g.row(r) - dot * y.row(r)) / norms(r, 0);
      }
    });
    return out;
  }

  // Per-row layer normalization over features with affine (1 × M) params.
  Var layer_norm(Var a, Var gamma, Var beta, T eps = T(1e-5)) {
    const Mat<T>& x = val(a);
    const Eigen::Index n = x.cols();
    require(val(gamma).rows() == 1 && val(gamma).cols() == n, "layer_norm gamma shape");
    require(val(beta).rows() == 1 && val(beta).cols() == n, "layer_norm beta shape");
    Mat<T> xhat(x.rows(), n), istd(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T mu = x.row(r).mean();
      const T var = (x.row(r).array() - mu).square().sum() / static_cast<T>(n);
      istd(r, 0) = T(1) / std::sqrt(var + eps);
      xhat.row(r) = (x.row(r).array() - mu) * istd(r, 0);
    }
    Mat<T> y(x.rows(), n);
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      y.row(r) = xhat.row(r).cwiseProduct(val(gamma).row(0)) + val(beta).row(0);
    Var out = push(std::move(y), needs(a) || needs(gamma) || needs(beta), {});
    if (!nodes_[out.i].ng) return out;
    const int io = out.i, ia = a.i, ig = gamma.i, ib = beta.i;
    nodes_[io].bw = [this, io, ia, ig, ib, xhat = std::move(xhat), istd = std::move(istd)] {
      const Mat<T>& g = nodes_[io].grad;
      const Eigen::Index n = g.cols();
      if (wants(ig)) gref(ig) += g.cwiseProduct(xhat).colwise().sum();
      if (wants(ib)) gref(ib) += g.colwise().sum();
      if (wants(ia)) {
        Mat<T>& dx = gref(ia);
        const auto gamma_row = nodes_[ig].val.row(0);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const Mat<T> dxhat = g.row(r).cwiseProduct(gamma_row);
          const T m1 = dxhat.sum() / static_cast<T>(n);
          const T m2 = dxhat.cwiseProduct(xhat.row(r)).sum() / static_cast<T>(n);
          dx.row(r) +=
              istd(r, 0) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
        }
      }
    };
    return out;
  }

  // --- structure -------------------------------------------------------------

  Var concat_rows(Var a, Var b) {
    require(val(a).cols() == val(b).cols(), "concat_rows: col mismatch");
    Mat<T> y(val(a).rows() + val(b).rows(), val(a).cols());
    y.topRows(val(a).rows()) = val(a);
    y.bottomRows(val(b).rows()) = val(b);
    Var out = push(std::move(y), needs(a) || needs(b), {});
    const Eigen::Index na = val(a).rows();
    binop_bw(out, a, b, [this, na](int o, int ia, int ib) {
      const Mat<T>& g = nodes_[o].grad;
      if (wants(ia)) gref(ia) += g.topRows(na);
      if (wants(ib)) gref(ib) += g.bottomRows(g.rows() - na);
    });
    return out;
  }

  Var concat_cols(Var a, Var b) {
    require(val(a).rows() == val(b).rows(), "concat_cols: row mismatch");
    Mat<T> y(val(a).rows(), val(a).cols() + val(b).cols());
    y.leftCols(val(a).cols()) = val(a);
    y.rightCols(val(b).cols()) = val(b);
    Var out = push(std::move(y), needs(a) || needs(b), {});
    const Eigen::Index ca = val(a).cols();
    binop_bw(out, a, b, [this, ca](int o, int ia, int ib) {
      const Mat<T>& g = nodes_[o].grad;
      if (wants(ia)) gref(ia) += g.leftCols(ca);
      if (wants(ib)) gref(ib) += g.rightCols(g.cols() - ca);
    });
    return out;
  }

  // Value pass-through that blocks the gradient.
  Var detach(Var a) { return push(val(a), false, {}); }

  // --- convolution -------------------------------------------------------------

  // Batched valid-padding conv. Input rows are flattened CHW images; weight is
  // (out_c × in_c·k·k); bias is (1 × out_c). Output rows are flattened CHW.
  // im2col buffers are rebuilt in the backward pass instead of cached: at the
  // trained batch sizes the rebuild is cheaper than holding every buffer.
  Var conv2d(Var x, Var w, Var b, const Conv2dSpec& spec) {
    spec.validate();
    const Mat<T>& in = val(x);
    const Eigen::Index n = in.rows();
    require(in.cols() == static_cast<Eigen::Index>(spec.in_c) * spec.in_h * spec.in_w,
            "conv2d: input cols ", in.cols(), " != ", spec.in_c * spec.in_h * spec.in_w);
    require(val(w).rows() == spec.out_c &&
                val(w).cols() == static_cast<Eigen::Index>(spec.in_c) * spec.k * spec.k,
            "conv2d: weight shape");
    require(val(b).rows() == 1 && val(b).cols() == spec.out_c, "conv2d: bias shape");
    const int oh = spec.out_h(), ow = spec.out_w();
    const Eigen::Index patch = static_cast<Eigen::Index>(spec.in_c) * spec.k * spec.k;

    Mat<T> out(n, static_cast<Eigen::Index>(spec.out_c) * oh * ow);
    Mat<T> cols(static_cast<Eigen::Index>(oh) * ow, patch);
    for (Eigen::Index s = 0; s < n; ++s) {
      im2col(in.row(s).data(), spec, cols);
      // (ohw × patch) · (patch × out_c) → (ohw × out_c); store transposed so
      // the row layout is channel-major like the input.
      Mat<T> m = cols * val(w).transpose();
      m.rowwise() += val(b).row(0);
      Eigen::Map<Mat<T>>(out.row(s).data(), spec.out_c, static_cast<Eigen::Index>(oh) * ow) =
          m.transpose();
    }
    Var o = push(std::move(out), needs(x) || needs(w) || needs(b), {});
    if (!nodes_[o.i].ng) return o;
    const int io = o.i, ix = x.i, iw = w.i, ib = b.i;
    nodes_[io].bw = [this, io, ix, iw, ib, spec] {
      const Mat<T>& in = nodes_[ix].val;
      const Mat<T>& g = nodes_[io].grad;
      const int oh = spec.out_h(), ow = spec.out_w();
      const Eigen::Index ohw = static_cast<Eigen::Index>(oh) * ow;
      const Eigen::Index patch = static_cast<Eigen::Index>(spec.in_c) * spec.k * spec.k;
      Mat<T> cols(ohw, patch);
      for (Eigen::Index s = 0; s < in.rows(); ++s) {
        // dM: (ohw × out_c) view of this sample's output grad.
        const Eigen::Map<const Mat<T>> gm(g.row(s).data(), spec.out_c, ohw);
        if (wants(iw) || wants(ib)) {
          if (wants(ib)) gref(ib) += gm.rowwise().sum().transpose();
          if (wants(iw)) {
            im2col(in.row(s).data(), spec, cols);
            gref(iw) += gm * cols;
          }
        }
        if (wants(ix)) {
          Mat<T> dcols = gm.transpose() * nodes_[iw].val;  // (ohw × patch)
          col2im_add(dcols, spec, gref(ix).row(s).data());
        }
      }
    };
    return o;
  }

  // --- execution ---------------------------------------------------------------

  const Mat<T>& val(Var v) const { return nodes_.at(v.i).val; }
  const Mat<T>& grad(Var v) const { return nodes_.at(v.i).grad; }

  T scalar(Var v) const {
    require(val(v).size() == 1, "scalar(): node is not 1x1");
    return val(v)(0, 0);
  }

  // Seed d(loss)/d(loss) = 1 and sweep the tape in reverse. Parameter
  // gradients accumulate into their Param structs.
  void backward(Var loss) {
    require(loss.valid() && val(loss).size() == 1, "backward: loss must be a scalar node");
    ensure(nodes_[loss.i].ng, "backward: loss does not depend on any trainable input");
    for (auto& nd : nodes_)
      if (nd.ng) nd.grad = Mat<T>::Zero(nd.val.rows(), nd.val.cols());
    nodes_[loss.i].grad(0, 0) = T(1);
    for (int i = loss.i; i >= 0; --i)
      if (nodes_[i].ng && nodes_[i].bw) nodes_[i].bw();
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> val;
    Mat<T> grad;
    bool ng = false;
    std::function<void()> bw;
  };

  std::vector<Node> nodes_;

  Var push(Mat<T> v, bool ng, std::function<void()> bw) {
    nodes_.push_back(Node{std::move(v), {}, ng, std::move(bw)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool needs(Var v) const { return nodes_[v.i].ng; }
  bool wants(int i) const { return nodes_[i].ng; }
  Mat<T>& gref(int i) { return nodes_[i].grad; }

  void same_shape(Var a, Var b, const char* op) const {
    require(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(), op,
            ": shape mismatch (", val(a).rows(), "x", val(a).cols(), " vs ", val(b).rows(), "x",
            val(b).cols(), ")");
  }

  template <typename F>
  void unop_bw(Var out, Var a, F f) {
    if (!nodes_[out.i].ng) return;
    const int o = out.i, ia = a.i;
    nodes_[o].bw = [f = std::move(f), o, ia] { f(o, ia); };
  }

  template <typename F>
  void binop_bw(Var out, Var a, Var b, F f) {
    if (!nodes_[out.i].ng) return;
    const int o = out.i, ia = a.i, ib = b.i;
    nodes_[o].bw = [f = std::move(f), o, ia, ib] { f(o, ia, ib); };
  }

  // cols(row = oy·ow+ox, col = (ic·k+ky)·k+kx) = img[ic][oy·stride+ky][ox·stride+kx]
  static void im2col(const T* img, const Conv2dSpec& sp, Mat<T>& cols) {
    const int oh = sp.out_h(), ow = sp.out_w();
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T* dst = cols.row(static_cast<Eigen::Index>(oy) * ow + ox).data();
        for (int ic = 0; ic < sp.in_c; ++ic) {
          const T* plane = img + static_cast<size_t>(ic) * sp.in_h * sp.in_w;
          for (int ky = 0; ky < sp.k; ++ky) {
            const T* src = plane + static_cast<size_t>(oy * sp.stride + ky) * sp.in_w +
                           ox * sp.stride;
            for (int kx = 0; kx < sp.k; ++kx) *dst++ = src[kx];
          }
        }
      }
  }

  static void col2im_add(const Mat<T>& dcols, const Conv2dSpec& sp, T* dimg) {
    const int oh = sp.out_h(), ow = sp.out_w();
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const T* src = dcols.row(static_cast<Eigen::Index>(oy) * ow + ox).data();
        for (int ic = 0; ic < sp.in_c; ++ic) {
          T* plane = dimg + static_cast<size_t>(ic) * sp.in_h * sp.in_w;
          for (int ky = 0; ky < sp.k; ++ky) {
            T* dst = plane + static_cast<size_t>(oy * sp.stride + ky) * sp.in_w + ox * sp.stride;
            for (int kx = 0; kx < sp.k; ++kx) dst[kx] += *src++;
          }
        }
      }
  }
};

}  // namespace claifo
