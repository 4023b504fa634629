#include "hex4d/tape.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "hex4d/parallel.h"

namespace hex4d {
namespace {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<RowMat<S>>;
template <class S>
using CMatMap = Eigen::Map<const RowMat<S>>;

template <class S>
S stable_sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

template <class S>
S stable_softplus(S x) {
  if (x > S(20)) return x;
  return std::log1p(std::exp(x));
}

// im2col for conv geometry: input {C,H,W}, kernel (kh,kw), stride s, pad p,
// output grid (OH,OW). cols is (C*kh*kw, OH*OW), row-major.
template <class S>
void im2col(const S* x, int C, int H, int W, int kh, int kw, int s, int p, int OH, int OW,
            S* cols) {
  const int64_t ow = OW;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        S* row = cols + (static_cast<int64_t>((c * kh + ki) * kw + kj)) * OH * ow;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * s + ki - p;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * s + kj - p;
            row[oy * ow + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                    ? x[(static_cast<int64_t>(c) * H + iy) * W + ix]
                                    : S(0);
          }
        }
      }
    }
  }
}

// Adjoint scatter-add of im2col.
template <class S>
void col2im(const S* cols, int C, int H, int W, int kh, int kw, int s, int p, int OH, int OW,
            S* x) {
  const int64_t ow = OW;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const S* row = cols + (static_cast<int64_t>((c * kh + ki) * kw + kj)) * OH * ow;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * s + ki - p;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * s + kj - p;
            if (ix < 0 || ix >= W) continue;
            x[(static_cast<int64_t>(c) * H + iy) * W + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// infrastructure
// ---------------------------------------------------------------------------

template <class S>
int Tape<S>::push(Tensor<S> value, bool track, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.tracked = track;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

template <class S>
typename Tape<S>::Node& Tape<S>::node(int id) {
  H4D_CHECK(id >= 0 && id < num_nodes(), "bad node id ", id);
  return nodes_[static_cast<size_t>(id)];
}

template <class S>
const typename Tape<S>::Node& Tape<S>::node(int id) const {
  H4D_CHECK(id >= 0 && id < num_nodes(), "bad node id ", id);
  return nodes_[static_cast<size_t>(id)];
}

template <class S>
Tensor<S>& Tape<S>::grad_buf(int id) {
  Node& n = node(id);
  if (n.ext_grad) return *n.ext_grad;
  if (!n.grad) n.grad = std::make_unique<Tensor<S>>(n.value.shape);
  return *n.grad;
}

template <class S>
bool Tape<S>::has_grad(int id) const {
  const Node& n = node(id);
  return n.ext_grad != nullptr || n.grad != nullptr;
}

template <class S>
const Tensor<S>& Tape<S>::val(int id) const {
  return node(id).value;
}

template <class S>
const Tensor<S>& Tape<S>::grad(int id) {
  return grad_buf(id);
}

template <class S>
bool Tape<S>::tracked(int id) const {
  return node(id).tracked;
}

template <class S>
void Tape<S>::accumulate_grad(int id, const Tensor<S>& g) {
  Node& n = node(id);
  H4D_CHECK(g.same_shape(n.value), "adjoint shape mismatch on node ", id);
  Tensor<S>& dst = grad_buf(id);
  const S* gp = g.data();
  S* dp = dst.data();
  for (int64_t i = 0; i < g.size(); ++i) dp[i] += gp[i];
}

template <class S>
void Tape<S>::backward(int loss) {
  H4D_CHECK(!ran_backward_, "backward already ran on this tape; build a fresh graph");
  Node& ln = node(loss);
  H4D_CHECK(ln.value.size() == 1, "backward target must be a scalar, got shape with ",
            ln.value.size(), " elements");
  const S lv = ln.value[0];
  if (!std::isfinite(static_cast<double>(lv)))
    throw NumericError(detail::concat("backward on non-finite loss value ", lv));
  ran_backward_ = true;
  grad_buf(loss)[0] += S(1);
  for (int i = loss; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.back && (n.grad || n.ext_grad)) n.back(*this);
  }
}

// ---------------------------------------------------------------------------
// leaves
// ---------------------------------------------------------------------------

template <class S>
int Tape<S>::constant(Tensor<S> v) {
  return push(std::move(v), false, {});
}

template <class S>
int Tape<S>::leaf(Tensor<S> v) {
  return push(std::move(v), true, {});
}

template <class S>
int Tape<S>::param(ParamStore<S>& ps, int entry_index) {
  auto& e = ps.entry(entry_index);
  int out = push(e.value, true, {});
  node(out).ext_grad = &e.grad;
  return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class S>
template <class F, class DF>
int Tape<S>::eltwise(int a, F f, DF df) {
  const Tensor<S>& x = node(a).value;
  Tensor<S> y(x.shape);
  const S* xp = x.data();
  S* yp = y.data();
  parallel_for(x.size(), [&](int64_t b, int64_t e, int) {
    for (int64_t k = b; k < e; ++k) yp[k] = f(xp[k]);
  });
  const bool tr = node(a).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a, df](Tape& t) {
      const S* xp2 = t.node(a).value.data();
      const S* yp2 = t.node(out).value.data();
      const S* gy = t.grad_buf(out).data();
      S* gx = t.grad_buf(a).data();
      parallel_for(t.node(a).value.size(), [&](int64_t b, int64_t e, int) {
        for (int64_t k = b; k < e; ++k) gx[k] += df(xp2[k], yp2[k]) * gy[k];
      });
    };
  }
  return out;
}

template <class S>
int Tape<S>::relu(int a) {
  return eltwise(
      a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <class S>
int Tape<S>::leaky_relu(int a, S slope) {
  return eltwise(
      a, [slope](S x) { return x > S(0) ? x : slope * x; },
      [slope](S x, S) { return x > S(0) ? S(1) : slope; });
}

template <class S>
int Tape<S>::sigmoid(int a) {
  return eltwise(
      a, [](S x) { return stable_sigmoid(x); }, [](S, S y) { return y * (S(1) - y); });
}

template <class S>
int Tape<S>::softplus(int a) {
  return eltwise(
      a, [](S x) { return stable_softplus(x); }, [](S x, S) { return stable_sigmoid(x); });
}

template <class S>
int Tape<S>::tanh_(int a) {
  return eltwise(
      a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <class S>
int Tape<S>::square(int a) {
  return eltwise(
      a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

template <class S>
int Tape<S>::clamp01(int a) {
  return eltwise(
      a, [](S x) { return std::min(S(1), std::max(S(0), x)); },
      [](S x, S) { return (x > S(0) && x < S(1)) ? S(1) : S(0); });
}

template <class S>
int Tape<S>::scale(int a, S c) {
  return eltwise(
      a, [c](S x) { return c * x; }, [c](S, S) { return c; });
}

template <class S>
int Tape<S>::add_const_scalar(int a, S c) {
  return eltwise(
      a, [c](S x) { return x + c; }, [](S, S) { return S(1); });
}

template <class S>
int Tape<S>::add(int a, int b) {
  return add_scaled(a, b, S(1), S(1));
}

template <class S>
int Tape<S>::sub(int a, int b) {
  return add_scaled(a, b, S(1), S(-1));
}

template <class S>
int Tape<S>::add_scaled(int a, int b, S ca, S cb) {
  const Tensor<S>& xa = node(a).value;
  const Tensor<S>& xb = node(b).value;
  H4D_CHECK(xa.same_shape(xb), "add_scaled shape mismatch");
  Tensor<S> y(xa.shape);
  const S* ap = xa.data();
  const S* bp = xb.data();
  S* yp = y.data();
  parallel_for(xa.size(), [&](int64_t s, int64_t e, int) {
    for (int64_t k = s; k < e; ++k) yp[k] = ca * ap[k] + cb * bp[k];
  });
  const bool tr = node(a).tracked || node(b).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a, b, ca, cb](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      const int64_t n = t.node(out).value.size();
      if (t.node(a).tracked) {
        S* gx = t.grad_buf(a).data();
        parallel_for(n, [&](int64_t s, int64_t e, int) {
          for (int64_t k = s; k < e; ++k) gx[k] += ca * gy[k];
        });
      }
      if (t.node(b).tracked) {
        S* gx = t.grad_buf(b).data();
        parallel_for(n, [&](int64_t s, int64_t e, int) {
          for (int64_t k = s; k < e; ++k) gx[k] += cb * gy[k];
        });
      }
    };
  }
  return out;
}

template <class S>
int Tape<S>::mul(int a, int b) {
  const Tensor<S>& xa = node(a).value;
  const Tensor<S>& xb = node(b).value;
  H4D_CHECK(xa.same_shape(xb), "mul shape mismatch");
  Tensor<S> y(xa.shape);
  const S* ap = xa.data();
  const S* bp = xb.data();
  S* yp = y.data();
  parallel_for(xa.size(), [&](int64_t s, int64_t e, int) {
    for (int64_t k = s; k < e; ++k) yp[k] = ap[k] * bp[k];
  });
  const bool tr = node(a).tracked || node(b).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a, b](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      const S* ap2 = t.node(a).value.data();
      const S* bp2 = t.node(b).value.data();
      const int64_t n = t.node(out).value.size();
      if (t.node(a).tracked) {
        S* gx = t.grad_buf(a).data();
        parallel_for(n, [&](int64_t s, int64_t e, int) {
          for (int64_t k = s; k < e; ++k) gx[k] += bp2[k] * gy[k];
        });
      }
      if (t.node(b).tracked) {
        S* gx = t.grad_buf(b).data();
        parallel_for(n, [&](int64_t s, int64_t e, int) {
          for (int64_t k = s; k < e; ++k) gx[k] += ap2[k] * gy[k];
        });
      }
    };
  }
  return out;
}

template <class S>
int Tape<S>::mul_const(int a, Tensor<S> w) {
  const Tensor<S>& xa = node(a).value;
  H4D_CHECK(xa.same_shape(w), "mul_const shape mismatch");
  auto wp = std::make_shared<Tensor<S>>(std::move(w));
  Tensor<S> y(xa.shape);
  const S* ap = xa.data();
  const S* cp = wp->data();
  S* yp = y.data();
  for (int64_t k = 0; k < xa.size(); ++k) yp[k] = ap[k] * cp[k];
  const bool tr = node(a).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a, wp](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      const S* cp2 = wp->data();
      S* gx = t.grad_buf(a).data();
      const int64_t n = t.node(out).value.size();
      for (int64_t k = 0; k < n; ++k) gx[k] += cp2[k] * gy[k];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class S>
int Tape<S>::concat_cols(const std::vector<int>& xs) {
  H4D_CHECK(!xs.empty(), "concat_cols of nothing");
  const int64_t rows = node(xs[0]).value.rows();
  int64_t total = 0;
  bool tr = false;
  for (int id : xs) {
    const auto& v = node(id).value;
    H4D_CHECK(v.rows() == rows, "concat_cols row mismatch");
    total += v.cols();
    tr = tr || node(id).tracked;
  }
  Tensor<S> y({static_cast<int>(rows), static_cast<int>(total)});
  int64_t off = 0;
  for (int id : xs) {
    const auto& v = node(id).value;
    const int64_t c = v.cols();
    for (int64_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * c, c, y.data() + r * total + off);
    off += c;
  }
  int out = push(std::move(y), tr, {});
  if (tr) {
    std::vector<int> inputs = xs;
    node(out).back = [out, inputs, rows, total](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      int64_t off2 = 0;
      for (int id : inputs) {
        const int64_t c = t.node(id).value.cols();
        if (t.node(id).tracked) {
          S* gx = t.grad_buf(id).data();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t k = 0; k < c; ++k) gx[r * c + k] += gy[r * total + off2 + k];
        }
        off2 += c;
      }
    };
  }
  return out;
}

template <class S>
int Tape<S>::slice_cols(int a, int64_t c0, int64_t c1) {
  const Tensor<S>& x = node(a).value;
  const int64_t rows = x.rows(), cols = x.cols();
  H4D_CHECK(c0 >= 0 && c0 < c1 && c1 <= cols, "slice_cols [", c0, ",", c1, ") of ", cols);
  const int64_t w = c1 - c0;
  Tensor<S> y({static_cast<int>(rows), static_cast<int>(w)});
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(x.data() + r * cols + c0, w, y.data() + r * w);
  const bool tr = node(a).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a, c0, w](Tape& t) {
      const Tensor<S>& xv = t.node(a).value;
      const int64_t rows2 = xv.rows(), cols2 = xv.cols();
      const S* gy = t.grad_buf(out).data();
      S* gx = t.grad_buf(a).data();
      for (int64_t r = 0; r < rows2; ++r)
        for (int64_t k = 0; k < w; ++k) gx[r * cols2 + c0 + k] += gy[r * w + k];
    };
  }
  return out;
}

template <class S>
int Tape<S>::concat_rows(const std::vector<int>& xs) {
  H4D_CHECK(!xs.empty(), "concat_rows of nothing");
  const int64_t cols = node(xs[0]).value.cols();
  int64_t total = 0;
  bool tr = false;
  for (int id : xs) {
    const auto& v = node(id).value;
    H4D_CHECK(v.cols() == cols, "concat_rows col mismatch");
    total += v.rows();
    tr = tr || node(id).tracked;
  }
  Tensor<S> y({static_cast<int>(total), static_cast<int>(cols)});
  int64_t off = 0;
  for (int id : xs) {
    const auto& v = node(id).value;
    std::copy_n(v.data(), v.size(), y.data() + off * cols);
    off += v.rows();
  }
  int out = push(std::move(y), tr, {});
  if (tr) {
    std::vector<int> inputs = xs;
    node(out).back = [out, inputs, cols](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      int64_t off2 = 0;
      for (int id : inputs) {
        const int64_t n = t.node(id).value.size();
        if (t.node(id).tracked) {
          S* gx = t.grad_buf(id).data();
          for (int64_t k = 0; k < n; ++k) gx[k] += gy[off2 * cols + k];
        }
        off2 += t.node(id).value.rows();
      }
    };
  }
  return out;
}

template <class S>
int Tape<S>::slice_rows(int a, int64_t r0, int64_t r1) {
  const Tensor<S>& x = node(a).value;
  const int64_t rows = x.rows(), cols = x.cols();
  H4D_CHECK(r0 >= 0 && r0 < r1 && r1 <= rows, "slice_rows [", r0, ",", r1, ") of ", rows);
  const int64_t h = r1 - r0;
  Tensor<S> y({static_cast<int>(h), static_cast<int>(cols)});
  std::copy_n(x.data() + r0 * cols, h * cols, y.data());
  const bool tr = node(a).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a, r0, h, cols](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      S* gx = t.grad_buf(a).data();
      for (int64_t k = 0; k < h * cols; ++k) gx[r0 * cols + k] += gy[k];
    };
  }
  return out;
}

template <class S>
int Tape<S>::reshape(int a, std::vector<int> shape) {
  const Tensor<S>& x = node(a).value;
  Tensor<S> y(shape);
  H4D_CHECK(y.size() == x.size(), "reshape changes element count");
  std::copy_n(x.data(), x.size(), y.data());
  const bool tr = node(a).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      S* gx = t.grad_buf(a).data();
      const int64_t n = t.node(a).value.size();
      for (int64_t k = 0; k < n; ++k) gx[k] += gy[k];
    };
  }
  return out;
}

template <class S>
int Tape<S>::transpose2d(int a) {
  const Tensor<S>& x = node(a).value;
  const int64_t r = x.rows(), c = x.cols();
  Tensor<S> y({static_cast<int>(c), static_cast<int>(r)});
  CMatMap<S> xm(x.data(), r, c);
  MatMap<S> ym(y.data(), c, r);
  ym = xm.transpose();
  const bool tr = node(a).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a, r, c](Tape& t) {
      CMatMap<S> gym(t.grad_buf(out).data(), c, r);
      MatMap<S> gxm(t.grad_buf(a).data(), r, c);
      gxm += gym.transpose();
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// dense linear algebra
// ---------------------------------------------------------------------------

template <class S>
int Tape<S>::linear(int x, int w, int b) {
  const Tensor<S>& xv = node(x).value;
  const Tensor<S>& wv = node(w).value;
  const Tensor<S>& bv = node(b).value;
  const int64_t N = xv.rows(), K = xv.cols();
  H4D_CHECK(wv.ndim() == 2 && wv.rows() == K, "linear: weight is ", wv.rows(), "x", wv.cols(),
            " but input has ", K, " features");
  const int64_t M = wv.cols();
  H4D_CHECK(bv.size() == M, "linear: bias size ", bv.size(), " vs ", M);
  Tensor<S> y({static_cast<int>(N), static_cast<int>(M)});
  CMatMap<S> xm(xv.data(), N, K);
  CMatMap<S> wm(wv.data(), K, M);
  MatMap<S> ym(y.data(), N, M);
  ym.noalias() = xm * wm;
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bv.data(), M);
  const bool tr = node(x).tracked || node(w).tracked || node(b).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, x, w, b, N, K, M](Tape& t) {
      CMatMap<S> gy(t.grad_buf(out).data(), N, M);
      if (t.node(x).tracked) {
        CMatMap<S> wm2(t.node(w).value.data(), K, M);
        MatMap<S> gx(t.grad_buf(x).data(), N, K);
        gx.noalias() += gy * wm2.transpose();
      }
      if (t.node(w).tracked) {
        CMatMap<S> xm2(t.node(x).value.data(), N, K);
        MatMap<S> gw(t.grad_buf(w).data(), K, M);
        gw.noalias() += xm2.transpose() * gy;
      }
      if (t.node(b).tracked) {
        Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> gb(t.grad_buf(b).data(), M);
        gb += gy.colwise().sum();
      }
    };
  }
  return out;
}

template <class S>
int Tape<S>::matmul(int a, int b) {
  const Tensor<S>& av = node(a).value;
  const Tensor<S>& bv = node(b).value;
  const int64_t N = av.rows(), K = av.cols();
  H4D_CHECK(bv.rows() == K, "matmul inner dim mismatch: ", K, " vs ", bv.rows());
  const int64_t M = bv.cols();
  Tensor<S> y({static_cast<int>(N), static_cast<int>(M)});
  MatMap<S>(y.data(), N, M).noalias() =
      CMatMap<S>(av.data(), N, K) * CMatMap<S>(bv.data(), K, M);
  const bool tr = node(a).tracked || node(b).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a, b, N, K, M](Tape& t) {
      CMatMap<S> gy(t.grad_buf(out).data(), N, M);
      if (t.node(a).tracked) {
        MatMap<S> ga(t.grad_buf(a).data(), N, K);
        ga.noalias() += gy * CMatMap<S>(t.node(b).value.data(), K, M).transpose();
      }
      if (t.node(b).tracked) {
        MatMap<S> gb(t.grad_buf(b).data(), K, M);
        gb.noalias() += CMatMap<S>(t.node(a).value.data(), N, K).transpose() * gy;
      }
    };
  }
  return out;
}

template <class S>
int Tape<S>::matmul_transb(int a, int b) {
  const Tensor<S>& av = node(a).value;
  const Tensor<S>& bv = node(b).value;
  const int64_t N = av.rows(), K = av.cols();
  H4D_CHECK(bv.cols() == K, "matmul_transb inner dim mismatch: ", K, " vs ", bv.cols());
  const int64_t M = bv.rows();
  Tensor<S> y({static_cast<int>(N), static_cast<int>(M)});
  MatMap<S>(y.data(), N, M).noalias() =
      CMatMap<S>(av.data(), N, K) * CMatMap<S>(bv.data(), M, K).transpose();
  const bool tr = node(a).tracked || node(b).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a, b, N, K, M](Tape& t) {
      CMatMap<S> gy(t.grad_buf(out).data(), N, M);
      if (t.node(a).tracked) {
        MatMap<S> ga(t.grad_buf(a).data(), N, K);
        ga.noalias() += gy * CMatMap<S>(t.node(b).value.data(), M, K);
      }
      if (t.node(b).tracked) {
        MatMap<S> gb(t.grad_buf(b).data(), M, K);
        gb.noalias() += gy.transpose() * CMatMap<S>(t.node(a).value.data(), N, K);
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// fusion / sampling / rendering
// ---------------------------------------------------------------------------

template <class S>
int Tape<S>::hadamard_list(const std::vector<int>& xs) {
  H4D_CHECK(!xs.empty() && xs.size() <= 8, "hadamard_list wants 1..8 tensors, got ", xs.size());
  const Tensor<S>& x0 = node(xs[0]).value;
  bool tr = node(xs[0]).tracked;
  for (size_t i = 1; i < xs.size(); ++i) {
    H4D_CHECK(node(xs[i]).value.same_shape(x0), "hadamard_list shape mismatch at input ", i);
    tr = tr || node(xs[i]).tracked;
  }
  const int k = static_cast<int>(xs.size());
  Tensor<S> y(x0.shape);
  {
    std::array<const S*, 8> p{};
    for (int i = 0; i < k; ++i) p[static_cast<size_t>(i)] = node(xs[static_cast<size_t>(i)]).value.data();
    S* yp = y.data();
    parallel_for(x0.size(), [&](int64_t s, int64_t e, int) {
      for (int64_t j = s; j < e; ++j) {
        S v = p[0][j];
        for (int i = 1; i < k; ++i) v *= p[static_cast<size_t>(i)][j];
        yp[j] = v;
      }
    });
  }
  int out = push(std::move(y), tr, {});
  if (tr) {
    std::vector<int> inputs = xs;
    node(out).back = [out, inputs, k](Tape& t) {
      std::array<const S*, 8> p{};
      for (int i = 0; i < k; ++i)
        p[static_cast<size_t>(i)] = t.node(inputs[static_cast<size_t>(i)]).value.data();
      const S* gy = t.grad_buf(out).data();
      const int64_t n = t.node(out).value.size();
      for (int i = 0; i < k; ++i) {
        if (!t.node(inputs[static_cast<size_t>(i)]).tracked) continue;
        S* gx = t.grad_buf(inputs[static_cast<size_t>(i)]).data();
        parallel_for(n, [&](int64_t s, int64_t e, int) {
          for (int64_t j = s; j < e; ++j) {
            S v = gy[j];
            for (int m = 0; m < k; ++m)
              if (m != i) v *= p[static_cast<size_t>(m)][j];
            gx[j] += v;
          }
        });
      }
    };
  }
  return out;
}

template <class S>
int Tape<S>::gather_bilinear(int grid, std::shared_ptr<BilinearTaps<S>> taps) {
  const Tensor<S>& g = node(grid).value;
  H4D_CHECK(g.ndim() == 3, "gather_bilinear wants a {U,V,F} grid");
  const int64_t texels = static_cast<int64_t>(g.dim(0)) * g.dim(1);
  const int64_t F = g.dim(2);
  const int64_t n = taps->npoints;
  H4D_CHECK(static_cast<int64_t>(taps->idx.size()) == 4 * n &&
                static_cast<int64_t>(taps->w.size()) == 4 * n,
            "malformed taps");
  for (int64_t i = 0; i < 4 * n; ++i)
    H4D_CHECK(taps->idx[static_cast<size_t>(i)] >= 0 && taps->idx[static_cast<size_t>(i)] < texels,
              "tap index out of range");
  Tensor<S> y({static_cast<int>(n), static_cast<int>(F)});
  {
    const S* gp = g.data();
    S* yp = y.data();
    const int32_t* idx = taps->idx.data();
    const S* w = taps->w.data();
    parallel_for(n, [&](int64_t s, int64_t e, int) {
      for (int64_t pt = s; pt < e; ++pt) {
        S* row = yp + pt * F;
        std::fill_n(row, F, S(0));
        for (int tpi = 0; tpi < 4; ++tpi) {
          const S wt = w[4 * pt + tpi];
          const S* src = gp + static_cast<int64_t>(idx[4 * pt + tpi]) * F;
          for (int64_t f = 0; f < F; ++f) row[f] += wt * src[f];
        }
      }
    });
  }
  const bool tr = node(grid).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, grid, taps, texels, F, n](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      Tensor<S>& gg = t.grad_buf(grid);
      const int32_t* idx = taps->idx.data();
      const S* w = taps->w.data();
      const int nt = num_threads();
      if (nt <= 1) {
        S* gp = gg.data();
        for (int64_t pt = 0; pt < n; ++pt) {
          const S* gr = gy + pt * F;
          for (int tpi = 0; tpi < 4; ++tpi) {
            const S wt = w[4 * pt + tpi];
            S* dst = gp + static_cast<int64_t>(idx[4 * pt + tpi]) * F;
            for (int64_t f = 0; f < F; ++f) dst[f] += wt * gr[f];
          }
        }
      } else {
        // Per-thread scatter buffers reduced in thread order for determinism.
        std::vector<std::vector<S>> part(static_cast<size_t>(nt));
        parallel_for(n, [&](int64_t s, int64_t e, int tid) {
          auto& buf = part[static_cast<size_t>(tid)];
          buf.assign(static_cast<size_t>(texels * F), S(0));
          for (int64_t pt = s; pt < e; ++pt) {
            const S* gr = gy + pt * F;
            for (int tpi = 0; tpi < 4; ++tpi) {
              const S wt = w[4 * pt + tpi];
              S* dst = buf.data() + static_cast<int64_t>(idx[4 * pt + tpi]) * F;
              for (int64_t f = 0; f < F; ++f) dst[f] += wt * gr[f];
            }
          }
        });
        S* gp = gg.data();
        for (int tid = 0; tid < nt; ++tid) {
          const auto& buf = part[static_cast<size_t>(tid)];
          if (buf.empty()) continue;
          for (int64_t k = 0; k < texels * F; ++k) gp[k] += buf[static_cast<size_t>(k)];
        }
      }
    };
  }
  return out;
}

template <class S>
int Tape<S>::composite(int sigma, int rgb, std::shared_ptr<CompositePlan<S>> plan,
                       std::vector<S>* weights_out) {
  plan->validate();
  const Tensor<S>& sv = node(sigma).value;
  const Tensor<S>& cv = node(rgb).value;
  const int64_t n = plan->nsamples();
  H4D_CHECK(sv.size() == n, "composite: sigma has ", sv.size(), " values, plan wants ", n);
  H4D_CHECK(cv.rows() == n && cv.cols() == 3, "composite: rgb must be (nsamples,3)");
  const int R = plan->nrays;
  Tensor<S> y({R, 5});
  if (weights_out) weights_out->assign(static_cast<size_t>(n), S(0));
  {
    const S* sp = sv.data();
    const S* cp = cv.data();
    S* yp = y.data();
    S* wp = weights_out ? weights_out->data() : nullptr;
    const auto& pl = *plan;
    parallel_for(R, [&](int64_t b, int64_t e, int) {
      for (int64_t r = b; r < e; ++r) {
        const int64_t o = pl.offsets[static_cast<size_t>(r)];
        const int64_t cnt = pl.offsets[static_cast<size_t>(r) + 1] - o;
        composite_ray(sp + o, cp + 3 * o, pl.tvals.data() + o, cnt,
                      pl.delta[static_cast<size_t>(r)], pl.bg.data(), pl.weight_floor,
                      yp + 5 * r, yp + 5 * r + 3, yp + 5 * r + 4, wp ? wp + o : nullptr);
      }
    });
  }
  const bool tr = node(sigma).tracked || node(rgb).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, sigma, rgb, plan](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      const S* sp = t.node(sigma).value.data();
      const S* cp = t.node(rgb).value.data();
      S* gs = t.grad_buf(sigma).data();
      S* gc = t.grad_buf(rgb).data();
      const auto& pl = *plan;
      parallel_for(pl.nrays, [&](int64_t b, int64_t e, int) {
        for (int64_t r = b; r < e; ++r) {
          const int64_t o = pl.offsets[static_cast<size_t>(r)];
          const int64_t cnt = pl.offsets[static_cast<size_t>(r) + 1] - o;
          composite_ray_backward(sp + o, cp + 3 * o, pl.tvals.data() + o, cnt,
                                 pl.delta[static_cast<size_t>(r)], pl.bg.data(), pl.weight_floor,
                                 gy + 5 * r, gy[5 * r + 3], gy[5 * r + 4], gs + o, gc + 3 * o);
        }
      });
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// rows / reductions
// ---------------------------------------------------------------------------

template <class S>
int Tape<S>::rowsum(int a) {
  const Tensor<S>& x = node(a).value;
  const int64_t rows = x.rows(), cols = x.cols();
  Tensor<S> y({static_cast<int>(rows), 1});
  for (int64_t r = 0; r < rows; ++r) {
    S acc = S(0);
    const S* p = x.data() + r * cols;
    for (int64_t c = 0; c < cols; ++c) acc += p[c];
    y[r] = acc;
  }
  const bool tr = node(a).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a, rows, cols](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      S* gx = t.grad_buf(a).data();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) gx[r * cols + c] += gy[r];
    };
  }
  return out;
}

template <class S>
int Tape<S>::normalize_rows(int a, S eps, std::vector<uint8_t>* valid_out) {
  const Tensor<S>& x = node(a).value;
  const int64_t rows = x.rows(), cols = x.cols();
  Tensor<S> y(x.shape);
  auto norms = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
  if (valid_out) valid_out->assign(static_cast<size_t>(rows), 1);
  for (int64_t r = 0; r < rows; ++r) {
    const S* p = x.data() + r * cols;
    S s2 = S(0);
    for (int64_t c = 0; c < cols; ++c) s2 += p[c] * p[c];
    const S nrm = std::sqrt(s2);
    (*norms)[static_cast<size_t>(r)] = nrm;
    S* q = y.data() + r * cols;
    if (nrm < eps) {
      std::fill_n(q, cols, S(0));
      if (valid_out) (*valid_out)[static_cast<size_t>(r)] = 0;
    } else {
      for (int64_t c = 0; c < cols; ++c) q[c] = p[c] / nrm;
    }
  }
  const bool tr = node(a).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a, rows, cols, eps, norms](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      const S* yv = t.node(out).value.data();
      S* gx = t.grad_buf(a).data();
      for (int64_t r = 0; r < rows; ++r) {
        const S nrm = (*norms)[static_cast<size_t>(r)];
        if (nrm < eps) continue;
        const S* yr = yv + r * cols;
        const S* gr = gy + r * cols;
        S d = S(0);
        for (int64_t c = 0; c < cols; ++c) d += yr[c] * gr[c];
        for (int64_t c = 0; c < cols; ++c) gx[r * cols + c] += (gr[c] - yr[c] * d) / nrm;
      }
    };
  }
  return out;
}

template <class S>
int Tape<S>::softmax_rows(int a) {
  const Tensor<S>& x = node(a).value;
  const int64_t rows = x.rows(), cols = x.cols();
  Tensor<S> y(x.shape);
  parallel_for(rows, [&](int64_t b, int64_t e, int) {
    for (int64_t r = b; r < e; ++r) {
      const S* p = x.data() + r * cols;
      S* q = y.data() + r * cols;
      S m = p[0];
      for (int64_t c = 1; c < cols; ++c) m = std::max(m, p[c]);
      S sum = S(0);
      for (int64_t c = 0; c < cols; ++c) {
        q[c] = std::exp(p[c] - m);
        sum += q[c];
      }
      for (int64_t c = 0; c < cols; ++c) q[c] /= sum;
    }
  });
  const bool tr = node(a).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, a, rows, cols](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      const S* yv = t.node(out).value.data();
      S* gx = t.grad_buf(a).data();
      parallel_for(rows, [&](int64_t b, int64_t e, int) {
        for (int64_t r = b; r < e; ++r) {
          const S* yr = yv + r * cols;
          const S* gr = gy + r * cols;
          S d = S(0);
          for (int64_t c = 0; c < cols; ++c) d += yr[c] * gr[c];
          for (int64_t c = 0; c < cols; ++c) gx[r * cols + c] += yr[c] * (gr[c] - d);
        }
      });
    };
  }
  return out;
}

template <class S>
int Tape<S>::sum(int a) {
  const Tensor<S>& x = node(a).value;
  S acc = S(0);
  for (int64_t k = 0; k < x.size(); ++k) acc += x[k];
  const bool tr = node(a).tracked;
  int out = push(Tensor<S>::scalar(acc), tr, {});
  if (tr) {
    node(out).back = [out, a](Tape& t) {
      const S g = t.grad_buf(out)[0];
      S* gx = t.grad_buf(a).data();
      const int64_t n = t.node(a).value.size();
      for (int64_t k = 0; k < n; ++k) gx[k] += g;
    };
  }
  return out;
}

template <class S>
int Tape<S>::mean(int a) {
  const int64_t n = node(a).value.size();
  H4D_CHECK(n > 0, "mean of empty tensor");
  return scale(sum(a), S(1) / static_cast<S>(n));
}

template <class S>
int Tape<S>::dot_const(int a, Tensor<S> w) {
  const Tensor<S>& x = node(a).value;
  H4D_CHECK(x.same_shape(w), "dot_const shape mismatch");
  auto wp = std::make_shared<Tensor<S>>(std::move(w));
  S acc = S(0);
  for (int64_t k = 0; k < x.size(); ++k) acc += x[k] * (*wp)[k];
  const bool tr = node(a).tracked;
  int out = push(Tensor<S>::scalar(acc), tr, {});
  if (tr) {
    node(out).back = [out, a, wp](Tape& t) {
      const S g = t.grad_buf(out)[0];
      S* gx = t.grad_buf(a).data();
      const S* cp = wp->data();
      const int64_t n = t.node(a).value.size();
      for (int64_t k = 0; k < n; ++k) gx[k] += g * cp[k];
    };
  }
  return out;
}

template <class S>
int Tape<S>::mse_const(int a, const Tensor<S>& target) {
  const Tensor<S>& x = node(a).value;
  H4D_CHECK(x.same_shape(target), "mse_const shape mismatch");
  auto tp = std::make_shared<Tensor<S>>(target);
  const int64_t n = x.size();
  H4D_CHECK(n > 0, "mse_const of empty tensor");
  S acc = S(0);
  for (int64_t k = 0; k < n; ++k) {
    const S d = x[k] - (*tp)[k];
    acc += d * d;
  }
  const bool tr = node(a).tracked;
  int out = push(Tensor<S>::scalar(acc / static_cast<S>(n)), tr, {});
  if (tr) {
    node(out).back = [out, a, tp, n](Tape& t) {
      const S g = t.grad_buf(out)[0] * S(2) / static_cast<S>(n);
      const S* xp = t.node(a).value.data();
      const S* tt = tp->data();
      S* gx = t.grad_buf(a).data();
      for (int64_t k = 0; k < n; ++k) gx[k] += g * (xp[k] - tt[k]);
    };
  }
  return out;
}

template <class S>
int Tape<S>::l1_const(int a, const Tensor<S>& target) {
  const Tensor<S>& x = node(a).value;
  H4D_CHECK(x.same_shape(target), "l1_const shape mismatch");
  auto tp = std::make_shared<Tensor<S>>(target);
  const int64_t n = x.size();
  H4D_CHECK(n > 0, "l1_const of empty tensor");
  S acc = S(0);
  for (int64_t k = 0; k < n; ++k) acc += std::abs(x[k] - (*tp)[k]);
  const bool tr = node(a).tracked;
  int out = push(Tensor<S>::scalar(acc / static_cast<S>(n)), tr, {});
  if (tr) {
    node(out).back = [out, a, tp, n](Tape& t) {
      const S g = t.grad_buf(out)[0] / static_cast<S>(n);
      const S* xp = t.node(a).value.data();
      const S* tt = tp->data();
      S* gx = t.grad_buf(a).data();
      for (int64_t k = 0; k < n; ++k) {
        const S d = xp[k] - tt[k];
        gx[k] += d > S(0) ? g : (d < S(0) ? -g : S(0));
      }
    };
  }
  return out;
}

template <class S>
int Tape<S>::l2norm(int a, S floor) {
  const Tensor<S>& x = node(a).value;
  S s2 = S(0);
  for (int64_t k = 0; k < x.size(); ++k) s2 += x[k] * x[k];
  const S nrm = std::sqrt(s2);
  const bool tr = node(a).tracked;
  int out = push(Tensor<S>::scalar(nrm), tr, {});
  if (tr) {
    node(out).back = [out, a, floor](Tape& t) {
      const S nrm2 = t.node(out).value[0];
      if (nrm2 <= floor) return;
      const S g = t.grad_buf(out)[0] / nrm2;
      const S* xp = t.node(a).value.data();
      S* gx = t.grad_buf(a).data();
      const int64_t n = t.node(a).value.size();
      for (int64_t k = 0; k < n; ++k) gx[k] += g * xp[k];
    };
  }
  return out;
}

template <class S>
int Tape<S>::bce_with_logits(int logits, S target) {
  const Tensor<S>& x = node(logits).value;
  const int64_t n = x.size();
  H4D_CHECK(n > 0, "bce_with_logits of empty tensor");
  S acc = S(0);
  for (int64_t k = 0; k < n; ++k) {
    const S l = x[k];
    acc += std::max(l, S(0)) - l * target + std::log1p(std::exp(-std::abs(l)));
  }
  const bool tr = node(logits).tracked;
  int out = push(Tensor<S>::scalar(acc / static_cast<S>(n)), tr, {});
  if (tr) {
    node(out).back = [out, logits, target, n](Tape& t) {
      const S g = t.grad_buf(out)[0] / static_cast<S>(n);
      const S* xp = t.node(logits).value.data();
      S* gx = t.grad_buf(logits).data();
      for (int64_t k = 0; k < n; ++k) gx[k] += g * (stable_sigmoid(xp[k]) - target);
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv / norm
// ---------------------------------------------------------------------------

template <class S>
int Tape<S>::conv2d(int x, int w, int b, int stride, int pad) {
  const Tensor<S>& xv = node(x).value;
  const Tensor<S>& wv = node(w).value;
  const Tensor<S>& bv = node(b).value;
  H4D_CHECK(xv.ndim() == 3 && wv.ndim() == 4, "conv2d wants x {C,H,W}, w {OC,C,kh,kw}");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const int OC = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  H4D_CHECK(wv.dim(1) == C, "conv2d channel mismatch: x has ", C, ", w expects ", wv.dim(1));
  H4D_CHECK(bv.size() == OC, "conv2d bias size mismatch");
  H4D_CHECK((H + 2 * pad - kh) % stride == 0 && (W + 2 * pad - kw) % stride == 0,
            "conv2d geometry not exact: ", H, "x", W, " k", kh, " s", stride, " p", pad);
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  const int64_t kdim = static_cast<int64_t>(C) * kh * kw;
  const int64_t nsp = static_cast<int64_t>(OH) * OW;
  auto cols = std::make_shared<std::vector<S>>(static_cast<size_t>(kdim * nsp));
  im2col(xv.data(), C, H, W, kh, kw, stride, pad, OH, OW, cols->data());
  Tensor<S> y({OC, OH, OW});
  MatMap<S> ym(y.data(), OC, nsp);
  ym.noalias() = CMatMap<S>(wv.data(), OC, kdim) * CMatMap<S>(cols->data(), kdim, nsp);
  for (int oc = 0; oc < OC; ++oc) ym.row(oc).array() += bv[oc];
  const bool tr = node(x).tracked || node(w).tracked || node(b).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, x, w, b, cols, C, H, W, OC, kh, kw, stride, pad, OH, OW, kdim,
                      nsp](Tape& t) {
      CMatMap<S> gy(t.grad_buf(out).data(), OC, nsp);
      if (t.node(w).tracked) {
        MatMap<S> gw(t.grad_buf(w).data(), OC, kdim);
        gw.noalias() += gy * CMatMap<S>(cols->data(), kdim, nsp).transpose();
      }
      if (t.node(b).tracked) {
        S* gb = t.grad_buf(b).data();
        for (int oc = 0; oc < OC; ++oc) gb[oc] += gy.row(oc).sum();
      }
      if (t.node(x).tracked) {
        std::vector<S> dcols(static_cast<size_t>(kdim * nsp));
        MatMap<S>(dcols.data(), kdim, nsp).noalias() =
            CMatMap<S>(t.node(w).value.data(), OC, kdim).transpose() * gy;
        col2im(dcols.data(), C, H, W, kh, kw, stride, pad, OH, OW, t.grad_buf(x).data());
      }
    };
  }
  return out;
}

template <class S>
int Tape<S>::conv2d_transpose(int x, int w, int b, int stride, int pad) {
  const Tensor<S>& xv = node(x).value;
  const Tensor<S>& wv = node(w).value;
  const Tensor<S>& bv = node(b).value;
  H4D_CHECK(xv.ndim() == 3 && wv.ndim() == 4, "conv2d_transpose wants x {C,H,W}, w {C,OC,kh,kw}");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const int OC = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  H4D_CHECK(wv.dim(0) == C, "conv2d_transpose channel mismatch");
  H4D_CHECK(bv.size() == OC, "conv2d_transpose bias size mismatch");
  const int OH = (H - 1) * stride - 2 * pad + kh;
  const int OW = (W - 1) * stride - 2 * pad + kw;
  H4D_CHECK(OH > 0 && OW > 0, "conv2d_transpose output would be empty");
  const int64_t kdim = static_cast<int64_t>(OC) * kh * kw;
  const int64_t nsp = static_cast<int64_t>(H) * W;
  // Forward of a transposed conv == backward-data of a conv mapping
  // {OC,OH,OW} -> {C,H,W} with the same (k,s,p).
  std::vector<S> tmp(static_cast<size_t>(kdim * nsp));
  MatMap<S>(tmp.data(), kdim, nsp).noalias() =
      CMatMap<S>(wv.data(), C, kdim).transpose() * CMatMap<S>(xv.data(), C, nsp);
  Tensor<S> y({OC, OH, OW});
  col2im(tmp.data(), OC, OH, OW, kh, kw, stride, pad, H, W, y.data());
  MatMap<S> ym(y.data(), OC, static_cast<int64_t>(OH) * OW);
  for (int oc = 0; oc < OC; ++oc) ym.row(oc).array() += bv[oc];
  const bool tr = node(x).tracked || node(w).tracked || node(b).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, x, w, b, C, H, W, OC, kh, kw, stride, pad, OH, OW, kdim,
                      nsp](Tape& t) {
      const S* gyp = t.grad_buf(out).data();
      std::vector<S> dcols(static_cast<size_t>(kdim * nsp));
      im2col(gyp, OC, OH, OW, kh, kw, stride, pad, H, W, dcols.data());
      CMatMap<S> dc(dcols.data(), kdim, nsp);
      if (t.node(x).tracked) {
        MatMap<S> gx(t.grad_buf(x).data(), C, nsp);
        gx.noalias() += CMatMap<S>(t.node(w).value.data(), C, kdim) * dc;
      }
      if (t.node(w).tracked) {
        MatMap<S> gw(t.grad_buf(w).data(), C, kdim);
        gw.noalias() += CMatMap<S>(t.node(x).value.data(), C, nsp) * dc.transpose();
      }
      if (t.node(b).tracked) {
        CMatMap<S> gym(gyp, OC, static_cast<int64_t>(OH) * OW);
        S* gb = t.grad_buf(b).data();
        for (int oc = 0; oc < OC; ++oc) gb[oc] += gym.row(oc).sum();
      }
    };
  }
  return out;
}

template <class S>
int Tape<S>::instance_norm(int x, int gamma, int beta, S eps) {
  const Tensor<S>& xv = node(x).value;
  const Tensor<S>& gv = node(gamma).value;
  const Tensor<S>& bv = node(beta).value;
  H4D_CHECK(xv.ndim() == 3, "instance_norm wants {C,H,W}");
  const int C = xv.dim(0);
  const int64_t hw = static_cast<int64_t>(xv.dim(1)) * xv.dim(2);
  H4D_CHECK(gv.size() == C && bv.size() == C, "instance_norm affine size mismatch");
  H4D_CHECK(hw > 0, "instance_norm over empty spatial extent");
  auto stats = std::make_shared<std::vector<S>>(static_cast<size_t>(2 * C));  // mu, inv
  Tensor<S> y(xv.shape);
  for (int c = 0; c < C; ++c) {
    const S* p = xv.data() + c * hw;
    S mu = S(0);
    for (int64_t k = 0; k < hw; ++k) mu += p[k];
    mu /= static_cast<S>(hw);
    S var = S(0);
    for (int64_t k = 0; k < hw; ++k) {
      const S d = p[k] - mu;
      var += d * d;
    }
    var /= static_cast<S>(hw);
    const S inv = S(1) / std::sqrt(var + eps);
    (*stats)[static_cast<size_t>(2 * c)] = mu;
    (*stats)[static_cast<size_t>(2 * c) + 1] = inv;
    S* q = y.data() + c * hw;
    const S gc = gv[c], bc = bv[c];
    for (int64_t k = 0; k < hw; ++k) q[k] = gc * (p[k] - mu) * inv + bc;
  }
  const bool tr = node(x).tracked || node(gamma).tracked || node(beta).tracked;
  int out = push(std::move(y), tr, {});
  if (tr) {
    node(out).back = [out, x, gamma, beta, C, hw, stats](Tape& t) {
      const S* gy = t.grad_buf(out).data();
      const S* xp = t.node(x).value.data();
      const S* gvp = t.node(gamma).value.data();
      for (int c = 0; c < C; ++c) {
        const S mu = (*stats)[static_cast<size_t>(2 * c)];
        const S inv = (*stats)[static_cast<size_t>(2 * c) + 1];
        const S* xr = xp + c * hw;
        const S* gr = gy + c * hw;
        S sum_g = S(0), sum_gx = S(0);
        for (int64_t k = 0; k < hw; ++k) {
          const S xhat = (xr[k] - mu) * inv;
          sum_g += gr[k];
          sum_gx += gr[k] * xhat;
        }
        if (t.node(gamma).tracked) t.grad_buf(gamma).data()[c] += sum_gx;
        if (t.node(beta).tracked) t.grad_buf(beta).data()[c] += sum_g;
        if (t.node(x).tracked) {
          S* gx = t.grad_buf(x).data() + c * hw;
          const S gc = gvp[c];
          const S mg = sum_g / static_cast<S>(hw);
          const S mgx = sum_gx / static_cast<S>(hw);
          for (int64_t k = 0; k < hw; ++k) {
            const S xhat = (xr[k] - mu) * inv;
            gx[k] += gc * inv * (gr[k] - mg - xhat * mgx);
          }
        }
      }
    };
  }
  return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace hex4d
