#pragma once

// Primitive differentiable operations recorded on a Tape. Convolutions and
// linear layers lower to im2col + GEMM (Eigen); everything else is direct
// loops. All ops validate shapes up front and name the offending dimensions
// in the diagnostic.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "confopt/tape.hpp"
#include "confopt/tensor.hpp"

namespace confopt::ops {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

[[noreturn]] inline void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument("shape mismatch in " + op + ": " + detail);
}

inline void require(bool ok, const std::string& op, const std::string& detail) {
  if (!ok) shape_error(op, detail);
}

inline int conv_out_dim(int in, int k, int stride, int pad, int dilation) {
  int eff = dilation * (k - 1) + 1;
  int out = (in + 2 * pad - eff) / stride + 1;
  if (out <= 0) shape_error("conv/pool", "output dim <= 0 (in=" + std::to_string(in) + ", k=" + std::to_string(k) + ")");
  return out;
}

// ---------------------------------------------------------------------------
// Leaves and trivial structure

template <typename T>
Var constant(Tape<T>& tape, Tensor<T> v) {
  return tape.leaf(std::move(v), false);
}

template <typename T>
Var identity(Tape<T>& tape, Var x) {
  return tape.node(tape.value(x), {x}, [x](Tape<T>& t, const Tensor<T>& g) { t.accumulate(x, g); });
}

// Zero operation. stride > 1 subsamples the spatial grid first (reduction
// cells), so the output shape follows the slicing law out = ceil(in/stride).
template <typename T>
Var zero_op(Tape<T>& tape, Var x, int stride = 1) {
  const auto& xs = tape.value(x).shape;
  require(xs.size() == 4, "zero", "expected NCHW input, got " + shape_str(xs));
  std::vector<int> os = xs;
  os[2] = (xs[2] + stride - 1) / stride;
  os[3] = (xs[3] + stride - 1) / stride;
  return tape.node(Tensor<T>::zeros(os), {x}, [x, xs](Tape<T>& t, const Tensor<T>&) {
    t.accumulate(x, Tensor<T>::zeros(xs));
  });
}

// Spatial subsample x[:, :, ::stride, ::stride]; parameter-free skip path
// for stride-2 edges.
template <typename T>
Var subsample(Tape<T>& tape, Var x, int stride) {
  const Tensor<T>& xv = tape.value(x);
  const auto& s = xv.shape;
  require(s.size() == 4, "subsample", "expected NCHW input, got " + shape_str(s));
  int N = s[0], C = s[1], H = s[2], W = s[3];
  int Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;
  Tensor<T> out = Tensor<T>::zeros({N, C, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < Ho; ++h)
        for (int w = 0; w < Wo; ++w)
          out.data[((static_cast<size_t>(n) * C + c) * Ho + h) * Wo + w] =
              xv.data[((static_cast<size_t>(n) * C + c) * H + h * stride) * W + w * stride];
  return tape.node(std::move(out), {x}, [x, N, C, H, W, Ho, Wo, stride](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = Tensor<T>::zeros({N, C, H, W});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < Ho; ++h)
          for (int w = 0; w < Wo; ++w)
            gx.data[((static_cast<size_t>(n) * C + c) * H + h * stride) * W + w * stride] =
                g.data[((static_cast<size_t>(n) * C + c) * Ho + h) * Wo + w];
    t.accumulate(x, gx);
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.same_shape(bv), "add", shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor<T> out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  return tape.node(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.same_shape(bv), "sub", shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor<T> out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
  return tape.node(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    Tensor<T> gb = g;
    for (auto& v : gb.data) v = -v;
    t.accumulate(b, gb);
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require(av.same_shape(bv), "mul", shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor<T> out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
  return tape.node(std::move(out), {a, b}, [a, b, av, bv](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> ga = g, gb = g;
    for (size_t i = 0; i < g.data.size(); ++i) {
      ga.data[i] *= bv.data[i];
      gb.data[i] *= av.data[i];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

template <typename T>
Var scale_const(Tape<T>& tape, Var x, T c) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.data) v *= c;
  return tape.node(std::move(out), {x}, [x, c](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = g;
    for (auto& v : gx.data) v *= c;
    t.accumulate(x, gx);
  });
}

template <typename T>
Var add_noise(Tape<T>& tape, Var x, const Tensor<T>& noise) {
  const auto& xv = tape.value(x);
  require(xv.same_shape(noise), "add_noise", shape_str(xv.shape) + " vs " + shape_str(noise.shape));
  Tensor<T> out = xv;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += noise.data[i];
  return tape.node(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) { t.accumulate(x, g); });
}

// x scaled by the idx-th element of vector w; the gradient flows to both.
template <typename T>
Var scale_by_element(Tape<T>& tape, Var x, Var w, int idx) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  require(idx >= 0 && static_cast<size_t>(idx) < wv.size(), "scale_by_element",
          "index " + std::to_string(idx) + " out of " + shape_str(wv.shape));
  T c = wv.data[idx];
  Tensor<T> out = xv;
  for (auto& v : out.data) v *= c;
  return tape.node(std::move(out), {x, w}, [x, w, idx, c, xv, ws = wv.shape](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = g;
    for (auto& v : gx.data) v *= c;
    t.accumulate(x, gx);
    T dw = 0;
    for (size_t i = 0; i < g.data.size(); ++i) dw += g.data[i] * xv.data[i];
    Tensor<T> gw = Tensor<T>::zeros(ws);
    gw.data[idx] = dw;
    t.accumulate(w, gw);
  });
}

// x / s for scalar variable s.
template <typename T>
Var div_by_scalar(Tape<T>& tape, Var x, Var s) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& sv = tape.value(s);
  require(sv.is_scalar(), "div_by_scalar", "divisor must be scalar, got " + shape_str(sv.shape));
  T d = sv.data[0];
  Tensor<T> out = xv;
  for (auto& v : out.data) v /= d;
  return tape.node(std::move(out), {x, s}, [x, s, d, xv](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = g;
    for (auto& v : gx.data) v /= d;
    t.accumulate(x, gx);
    T ds = 0;
    for (size_t i = 0; i < g.data.size(); ++i) ds -= g.data[i] * xv.data[i] / (d * d);
    t.accumulate(s, Tensor<T>::scalar(ds));
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  T acc = 0;
  for (T v : xv.data) acc += v;
  return tape.node(Tensor<T>::scalar(acc), {x}, [x, s = xv.shape](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, Tensor<T>::full(s, g.data[0]));
  });
}

template <typename T>
Var mean(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  T acc = 0;
  for (T v : xv.data) acc += v;
  T n = static_cast<T>(xv.size());
  return tape.node(Tensor<T>::scalar(acc / n), {x}, [x, s = xv.shape, n](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, Tensor<T>::full(s, g.data[0] / n));
  });
}

// Row r of a [R, C] matrix as a length-C vector.
template <typename T>
Var row(Tape<T>& tape, Var x, int r) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 2, "row", "expected matrix, got " + shape_str(xv.shape));
  int R = xv.shape[0], C = xv.shape[1];
  require(r >= 0 && r < R, "row", "row " + std::to_string(r) + " out of " + shape_str(xv.shape));
  Tensor<T> out({C}, std::vector<T>(xv.data.begin() + static_cast<size_t>(r) * C,
                                    xv.data.begin() + static_cast<size_t>(r + 1) * C));
  return tape.node(std::move(out), {x}, [x, r, R, C](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = Tensor<T>::zeros({R, C});
    for (int c = 0; c < C; ++c) gx.data[static_cast<size_t>(r) * C + c] = g.data[c];
    t.accumulate(x, gx);
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  Tensor<T> saved = out;
  return tape.node(std::move(out), {x}, [x, saved](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = g;
    for (size_t i = 0; i < gx.data.size(); ++i)
      if (saved.data[i] <= T(0)) gx.data[i] = T(0);
    t.accumulate(x, gx);
  });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.data) {
    double z = static_cast<double>(v);
    v = static_cast<T>(z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)));
  }
  Tensor<T> saved = out;
  return tape.node(std::move(out), {x}, [x, saved](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = g;
    for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] *= saved.data[i] * (T(1) - saved.data[i]);
    t.accumulate(x, gx);
  });
}

template <typename T>
Var exp_op(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.data) v = static_cast<T>(std::exp(static_cast<double>(v)));
  Tensor<T> saved = out;
  return tape.node(std::move(out), {x}, [x, saved](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = g;
    for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] *= saved.data[i];
    t.accumulate(x, gx);
  });
}

// Softmax over the last axis of a [N, C] matrix (max-shifted for stability).
template <typename T>
Var softmax_rows(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 2, "softmax_rows", "expected [N,C], got " + shape_str(xv.shape));
  int N = xv.shape[0], C = xv.shape[1];
  Tensor<T> out = xv;
  for (int n = 0; n < N; ++n) {
    T* p = out.data.data() + static_cast<size_t>(n) * C;
    T mx = *std::max_element(p, p + C);
    T z = 0;
    for (int c = 0; c < C; ++c) {
      p[c] = static_cast<T>(std::exp(static_cast<double>(p[c] - mx)));
      z += p[c];
    }
    for (int c = 0; c < C; ++c) p[c] /= z;
  }
  Tensor<T> saved = out;
  return tape.node(std::move(out), {x}, [x, saved, N, C](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = g;
    for (int n = 0; n < N; ++n) {
      const T* p = saved.data.data() + static_cast<size_t>(n) * C;
      T* gp = gx.data.data() + static_cast<size_t>(n) * C;
      T dot = 0;
      for (int c = 0; c < C; ++c) dot += gp[c] * p[c];
      for (int c = 0; c < C; ++c) gp[c] = p[c] * (gp[c] - dot);
    }
    t.accumulate(x, gx);
  });
}

// Softmax of a 1-D vector.
template <typename T>
Var softmax1d(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 1, "softmax1d", "expected vector, got " + shape_str(xv.shape));
  int C = xv.shape[0];
  Tensor<T> out = xv;
  T mx = *std::max_element(out.data.begin(), out.data.end());
  T z = 0;
  for (auto& v : out.data) {
    v = static_cast<T>(std::exp(static_cast<double>(v - mx)));
    z += v;
  }
  for (auto& v : out.data) v /= z;
  Tensor<T> saved = out;
  return tape.node(std::move(out), {x}, [x, saved, C](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = g;
    T dot = 0;
    for (int c = 0; c < C; ++c) dot += gx.data[c] * saved.data[c];
    for (int c = 0; c < C; ++c) gx.data[c] = saved.data[c] * (gx.data[c] - dot);
    t.accumulate(x, gx);
  });
}

// Straight-through node: forward value is one-hot at `index`, gradient
// passes to the soft weights unchanged.
template <typename T>
Var straight_through_onehot(Tape<T>& tape, Var soft, int index) {
  const Tensor<T>& sv = tape.value(soft);
  require(sv.rank() == 1, "straight_through", "expected vector, got " + shape_str(sv.shape));
  require(index >= 0 && index < sv.shape[0], "straight_through", "index out of range");
  Tensor<T> out = Tensor<T>::zeros(sv.shape);
  out.data[index] = T(1);
  return tape.node(std::move(out), {soft}, [soft](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(soft, g);
  });
}

// ---------------------------------------------------------------------------
// Dense and convolutional layers

// y[N,O] = x[N,F] * w[O,F]^T + b[O]; pass b < 0 for no bias.
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b = -1) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  require(xv.rank() == 2 && wv.rank() == 2, "linear",
          "x " + shape_str(xv.shape) + ", w " + shape_str(wv.shape));
  int N = xv.shape[0], F = xv.shape[1], O = wv.shape[0];
  require(wv.shape[1] == F, "linear", "in features " + std::to_string(F) + " vs w " + shape_str(wv.shape));
  Tensor<T> out = Tensor<T>::zeros({N, O});
  {
    Eigen::Map<const Mat<T>> X(xv.data.data(), N, F), W(wv.data.data(), O, F);
    Eigen::Map<Mat<T>> Y(out.data.data(), N, O);
    Y.noalias() = X * W.transpose();
  }
  if (b >= 0) {
    const Tensor<T>& bv = tape.value(b);
    require(bv.rank() == 1 && bv.shape[0] == O, "linear", "bias " + shape_str(bv.shape));
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) out.data[static_cast<size_t>(n) * O + o] += bv.data[o];
  }
  std::vector<Var> ins = b >= 0 ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return tape.node(std::move(out), ins, [x, w, b, xv, wv, N, F, O](Tape<T>& t, const Tensor<T>& g) {
    Eigen::Map<const Mat<T>> G(g.data.data(), N, O), X(xv.data.data(), N, F), W(wv.data.data(), O, F);
    if (t.requires_grad(x)) {
      Tensor<T> gx = Tensor<T>::zeros({N, F});
      Eigen::Map<Mat<T>>(gx.data.data(), N, F).noalias() = G * W;
      t.accumulate(x, gx);
    }
    if (t.requires_grad(w)) {
      Tensor<T> gw = Tensor<T>::zeros({O, F});
      Eigen::Map<Mat<T>>(gw.data.data(), O, F).noalias() = G.transpose() * X;
      t.accumulate(w, gw);
    }
    if (b >= 0 && t.requires_grad(b)) {
      Tensor<T> gb = Tensor<T>::zeros({O});
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) gb.data[o] += g.data[static_cast<size_t>(n) * O + o];
      t.accumulate(b, gb);
    }
  });
}

namespace detail {

// im2col for one sample and one group: columns indexed by output position.
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int dilation, int Ho, int Wo, T* col) {
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        T* dst = col + ((static_cast<size_t>(c) * kh + i) * kw + j) * Ho * Wo;
        for (int ho = 0; ho < Ho; ++ho) {
          int h = ho * stride - pad + i * dilation;
          if (h < 0 || h >= H) {
            std::fill(dst + static_cast<size_t>(ho) * Wo, dst + static_cast<size_t>(ho + 1) * Wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<size_t>(c) * H + h) * W;
          for (int wo = 0; wo < Wo; ++wo) {
            int w = wo * stride - pad + j * dilation;
            dst[static_cast<size_t>(ho) * Wo + wo] = (w >= 0 && w < W) ? src[w] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
            int dilation, int Ho, int Wo, T* x) {
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const T* src = col + ((static_cast<size_t>(c) * kh + i) * kw + j) * Ho * Wo;
        for (int ho = 0; ho < Ho; ++ho) {
          int h = ho * stride - pad + i * dilation;
          if (h < 0 || h >= H) continue;
          T* dst = x + (static_cast<size_t>(c) * H + h) * W;
          for (int wo = 0; wo < Wo; ++wo) {
            int w = wo * stride - pad + j * dilation;
            if (w >= 0 && w < W) dst[w] += src[static_cast<size_t>(ho) * Wo + wo];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, NCHW. w is [Cout, Cin/groups, kh, kw]; no bias (the cell
// operations follow conv-then-batchnorm, so bias would be redundant).
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, int stride = 1, int pad = 0, int dilation = 1,
           int groups = 1) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  require(xv.rank() == 4 && wv.rank() == 4, "conv2d",
          "x " + shape_str(xv.shape) + ", w " + shape_str(wv.shape));
  int N = xv.shape[0], Cin = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  int Cout = wv.shape[0], Cg = wv.shape[1], kh = wv.shape[2], kw = wv.shape[3];
  require(Cin % groups == 0 && Cout % groups == 0, "conv2d", "groups do not divide channels");
  require(Cg == Cin / groups, "conv2d",
          "w in-channels " + std::to_string(Cg) + " vs x " + std::to_string(Cin / groups) +
              " (Cin=" + std::to_string(Cin) + ", groups=" + std::to_string(groups) + ")");
  int Ho = conv_out_dim(H, kh, stride, pad, dilation);
  int Wo = conv_out_dim(W, kw, stride, pad, dilation);
  int Og = Cout / groups;
  int K = Cg * kh * kw;
  int P = Ho * Wo;

  Tensor<T> out = Tensor<T>::zeros({N, Cout, Ho, Wo});
  std::vector<T> col(static_cast<size_t>(K) * P);
  for (int n = 0; n < N; ++n) {
    for (int g = 0; g < groups; ++g) {
      const T* xp = xv.data.data() + (static_cast<size_t>(n) * Cin + static_cast<size_t>(g) * Cg) * H * W;
      detail::im2col(xp, Cg, H, W, kh, kw, stride, pad, dilation, Ho, Wo, col.data());
      Eigen::Map<const Mat<T>> Wm(wv.data.data() + static_cast<size_t>(g) * Og * K, Og, K);
      Eigen::Map<const Mat<T>> Cm(col.data(), K, P);
      Eigen::Map<Mat<T>> Om(out.data.data() + (static_cast<size_t>(n) * Cout + static_cast<size_t>(g) * Og) * P, Og, P);
      Om.noalias() = Wm * Cm;
    }
  }

  return tape.node(std::move(out), {x, w},
                   [=](Tape<T>& t, const Tensor<T>& g) {
                     bool need_x = t.requires_grad(x), need_w = t.requires_grad(w);
                     if (!need_x && !need_w) return;
                     Tensor<T> gx = need_x ? Tensor<T>::zeros({N, Cin, H, W}) : Tensor<T>{};
                     Tensor<T> gw = need_w ? Tensor<T>::zeros({Cout, Cg, kh, kw}) : Tensor<T>{};
                     std::vector<T> colb(static_cast<size_t>(K) * P);
                     for (int n = 0; n < N; ++n) {
                       for (int gr = 0; gr < groups; ++gr) {
                         Eigen::Map<const Mat<T>> Gm(
                             g.data.data() + (static_cast<size_t>(n) * Cout + static_cast<size_t>(gr) * Og) * P, Og, P);
                         if (need_w) {
                           const T* xp = xv.data.data() +
                                         (static_cast<size_t>(n) * Cin + static_cast<size_t>(gr) * Cg) * H * W;
                           detail::im2col(xp, Cg, H, W, kh, kw, stride, pad, dilation, Ho, Wo, colb.data());
                           Eigen::Map<const Mat<T>> Cm(colb.data(), K, P);
                           Eigen::Map<Mat<T>> Gw(gw.data.data() + static_cast<size_t>(gr) * Og * K, Og, K);
                           Gw.noalias() += Gm * Cm.transpose();
                         }
                         if (need_x) {
                           Eigen::Map<const Mat<T>> Wm(wv.data.data() + static_cast<size_t>(gr) * Og * K, Og, K);
                           Eigen::Map<Mat<T>> Cm(colb.data(), K, P);
                           Cm.noalias() = Wm.transpose() * Gm;
                           T* xp = gx.data.data() +
                                   (static_cast<size_t>(n) * Cin + static_cast<size_t>(gr) * Cg) * H * W;
                           detail::col2im(colb.data(), Cg, H, W, kh, kw, stride, pad, dilation, Ho, Wo, xp);
                         }
                       }
                     }
                     if (need_x) t.accumulate(x, gx);
                     if (need_w) t.accumulate(w, gw);
                   });
}

template <typename T>
Var max_pool2d(Tape<T>& tape, Var x, int k, int stride, int pad) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 4, "max_pool", "expected NCHW, got " + shape_str(xv.shape));
  int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  int Ho = conv_out_dim(H, k, stride, pad, 1), Wo = conv_out_dim(W, k, stride, pad, 1);
  Tensor<T> out = Tensor<T>::zeros({N, C, Ho, Wo});
  std::vector<int> argmax(out.size());
  size_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* xp = xv.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          int bi = -1;
          for (int i = 0; i < k; ++i) {
            int h = ho * stride - pad + i;
            if (h < 0 || h >= H) continue;
            for (int j = 0; j < k; ++j) {
              int w = wo * stride - pad + j;
              if (w < 0 || w >= W) continue;
              T v = xp[h * W + w];
              if (v > best) {
                best = v;
                bi = h * W + w;
              }
            }
          }
          out.data[o] = bi < 0 ? T(0) : best;
          argmax[o] = bi;
        }
    }
  return tape.node(std::move(out), {x},
                   [x, argmax, N, C, H, W, Ho, Wo](Tape<T>& t, const Tensor<T>& g) {
                     Tensor<T> gx = Tensor<T>::zeros({N, C, H, W});
                     size_t o = 0;
                     for (int n = 0; n < N; ++n)
                       for (int c = 0; c < C; ++c) {
                         T* xp = gx.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
                         for (int p = 0; p < Ho * Wo; ++p, ++o)
                           if (argmax[o] >= 0) xp[argmax[o]] += g.data[o];
                       }
                     t.accumulate(x, gx);
                   });
}

// Average pool with a fixed k*k divisor (padding zeros count toward the
// mean, so border outputs are attenuated).
template <typename T>
Var avg_pool2d(Tape<T>& tape, Var x, int k, int stride, int pad) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 4, "avg_pool", "expected NCHW, got " + shape_str(xv.shape));
  int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  int Ho = conv_out_dim(H, k, stride, pad, 1), Wo = conv_out_dim(W, k, stride, pad, 1);
  T inv = T(1) / static_cast<T>(k * k);
  Tensor<T> out = Tensor<T>::zeros({N, C, Ho, Wo});
  size_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* xp = xv.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo, ++o) {
          T acc = 0;
          for (int i = 0; i < k; ++i) {
            int h = ho * stride - pad + i;
            if (h < 0 || h >= H) continue;
            for (int j = 0; j < k; ++j) {
              int w = wo * stride - pad + j;
              if (w >= 0 && w < W) acc += xp[h * W + w];
            }
          }
          out.data[o] = acc * inv;
        }
    }
  return tape.node(std::move(out), {x},
                   [x, N, C, H, W, Ho, Wo, k, stride, pad, inv](Tape<T>& t, const Tensor<T>& g) {
                     Tensor<T> gx = Tensor<T>::zeros({N, C, H, W});
                     size_t o = 0;
                     for (int n = 0; n < N; ++n)
                       for (int c = 0; c < C; ++c) {
                         T* xp = gx.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
                         for (int ho = 0; ho < Ho; ++ho)
                           for (int wo = 0; wo < Wo; ++wo, ++o) {
                             T gv = g.data[o] * inv;
                             for (int i = 0; i < k; ++i) {
                               int h = ho * stride - pad + i;
                               if (h < 0 || h >= H) continue;
                               for (int j = 0; j < k; ++j) {
                                 int w = wo * stride - pad + j;
                                 if (w >= 0 && w < W) xp[h * W + w] += gv;
                               }
                             }
                           }
                       }
                     t.accumulate(x, gx);
                   });
}

// [N,C,H,W] -> [N,C]
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 4, "global_avg_pool", "expected NCHW, got " + shape_str(xv.shape));
  int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  T inv = T(1) / static_cast<T>(H * W);
  Tensor<T> out = Tensor<T>::zeros({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* xp = xv.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
      T acc = 0;
      for (int p = 0; p < H * W; ++p) acc += xp[p];
      out.data[static_cast<size_t>(n) * C + c] = acc * inv;
    }
  return tape.node(std::move(out), {x}, [x, N, C, H, W, inv](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = Tensor<T>::zeros({N, C, H, W});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        T gv = g.data[static_cast<size_t>(n) * C + c] * inv;
        T* xp = gx.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
        for (int p = 0; p < H * W; ++p) xp[p] = gv;
      }
    t.accumulate(x, gx);
  });
}

// Batch normalization over (N, H, W) per channel using batch statistics.
// gamma/beta < 0 disables the affine transform (supernet search mode).
// Batch mean/var (biased) are written out for running-stat updates.
template <typename T>
Var batch_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps,
               std::vector<T>* out_mean = nullptr, std::vector<T>* out_var = nullptr) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 4, "batch_norm", "expected NCHW, got " + shape_str(xv.shape));
  int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  int M = N * H * W;
  require(M > 1, "batch_norm", "needs more than one value per channel");
  std::vector<T> mu(C, T(0)), var(C, T(0)), istd(C);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* xp = xv.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
      for (int p = 0; p < H * W; ++p) mu[c] += xp[p];
    }
  for (int c = 0; c < C; ++c) mu[c] /= static_cast<T>(M);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* xp = xv.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
      for (int p = 0; p < H * W; ++p) {
        T d = xp[p] - mu[c];
        var[c] += d * d;
      }
    }
  for (int c = 0; c < C; ++c) {
    var[c] /= static_cast<T>(M);
    istd[c] = T(1) / static_cast<T>(std::sqrt(static_cast<double>(var[c] + eps)));
  }
  if (out_mean) *out_mean = mu;
  if (out_var) *out_var = var;

  bool affine = gamma >= 0;
  const T* gm = nullptr;
  const T* bt = nullptr;
  if (affine) {
    const Tensor<T>& gv = tape.value(gamma);
    const Tensor<T>& bv = tape.value(beta);
    require(gv.rank() == 1 && gv.shape[0] == C, "batch_norm", "gamma " + shape_str(gv.shape));
    require(bv.rank() == 1 && bv.shape[0] == C, "batch_norm", "beta " + shape_str(bv.shape));
    gm = gv.data.data();
    bt = bv.data.data();
  }

  Tensor<T> xhat = Tensor<T>::zeros(xv.shape);
  Tensor<T> out = Tensor<T>::zeros(xv.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      size_t base = (static_cast<size_t>(n) * C + c) * H * W;
      for (int p = 0; p < H * W; ++p) {
        T xh = (xv.data[base + p] - mu[c]) * istd[c];
        xhat.data[base + p] = xh;
        out.data[base + p] = affine ? gm[c] * xh + bt[c] : xh;
      }
    }

  std::vector<Var> ins = affine ? std::vector<Var>{x, gamma, beta} : std::vector<Var>{x};
  Tensor<T> gamma_saved = affine ? tape.value(gamma) : Tensor<T>{};
  return tape.node(std::move(out), ins,
                   [x, gamma, beta, xhat, istd, gamma_saved, affine, N, C, H, W, M](
                       Tape<T>& t, const Tensor<T>& g) {
                     std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
                     for (int n = 0; n < N; ++n)
                       for (int c = 0; c < C; ++c) {
                         size_t base = (static_cast<size_t>(n) * C + c) * H * W;
                         for (int p = 0; p < H * W; ++p) {
                           T gy = g.data[base + p];
                           sum_g[c] += gy;
                           sum_gx[c] += gy * xhat.data[base + p];
                         }
                       }
                     if (affine) {
                       if (t.requires_grad(gamma)) {
                         Tensor<T> gg({C}, sum_gx);
                         t.accumulate(gamma, gg);
                       }
                       if (t.requires_grad(beta)) {
                         Tensor<T> gb({C}, sum_g);
                         t.accumulate(beta, gb);
                       }
                     }
                     if (!t.requires_grad(x)) return;
                     Tensor<T> gx = Tensor<T>::zeros({N, C, H, W});
                     T invM = T(1) / static_cast<T>(M);
                     for (int n = 0; n < N; ++n)
                       for (int c = 0; c < C; ++c) {
                         T scale = (affine ? gamma_saved.data[c] : T(1)) * istd[c];
                         size_t base = (static_cast<size_t>(n) * C + c) * H * W;
                         for (int p = 0; p < H * W; ++p) {
                           T gy = g.data[base + p];
                           gx.data[base + p] =
                               scale * (gy - sum_g[c] * invM - xhat.data[base + p] * sum_gx[c] * invM);
                         }
                       }
                     t.accumulate(x, gx);
                   });
}

// Normalization with fixed (running) statistics; used at evaluation time.
template <typename T>
Var batch_norm_eval(Tape<T>& tape, Var x, Var gamma, Var beta, const std::vector<T>& mean,
                    const std::vector<T>& var, T eps) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 4, "batch_norm_eval", "expected NCHW, got " + shape_str(xv.shape));
  int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  require(static_cast<int>(mean.size()) == C && static_cast<int>(var.size()) == C,
          "batch_norm_eval", "stat length vs channels " + std::to_string(C));
  bool affine = gamma >= 0;
  std::vector<T> scale(C), shift(C);
  for (int c = 0; c < C; ++c) {
    T istd = T(1) / static_cast<T>(std::sqrt(static_cast<double>(var[c] + eps)));
    T gmc = affine ? tape.value(gamma).data[c] : T(1);
    T btc = affine ? tape.value(beta).data[c] : T(0);
    scale[c] = gmc * istd;
    shift[c] = btc - mean[c] * gmc * istd;
  }
  Tensor<T> out = Tensor<T>::zeros(xv.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      size_t base = (static_cast<size_t>(n) * C + c) * H * W;
      for (int p = 0; p < H * W; ++p) out.data[base + p] = xv.data[base + p] * scale[c] + shift[c];
    }
  return tape.node(std::move(out), {x}, [x, scale, N, C, H, W](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = g;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        size_t base = (static_cast<size_t>(n) * C + c) * H * W;
        for (int p = 0; p < H * W; ++p) gx.data[base + p] *= scale[c];
      }
    t.accumulate(x, gx);
  });
}

template <typename T>
Var concat_channels(Tape<T>& tape, const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_channels", "no inputs");
  const Tensor<T>& first = tape.value(xs[0]);
  require(first.rank() == 4, "concat_channels", "expected NCHW, got " + shape_str(first.shape));
  int N = first.shape[0], H = first.shape[2], W = first.shape[3];
  int Ctot = 0;
  std::vector<int> cs;
  for (Var v : xs) {
    const auto& s = tape.value(v).shape;
    require(s.size() == 4 && s[0] == N && s[2] == H && s[3] == W, "concat_channels",
            shape_str(s) + " vs " + shape_str(first.shape));
    cs.push_back(s[1]);
    Ctot += s[1];
  }
  Tensor<T> out = Tensor<T>::zeros({N, Ctot, H, W});
  int coff = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const Tensor<T>& xv = tape.value(xs[i]);
    for (int n = 0; n < N; ++n) {
      std::copy(xv.data.begin() + static_cast<size_t>(n) * cs[i] * H * W,
                xv.data.begin() + static_cast<size_t>(n + 1) * cs[i] * H * W,
                out.data.begin() + (static_cast<size_t>(n) * Ctot + coff) * H * W);
    }
    coff += cs[i];
  }
  return tape.node(std::move(out), xs, [xs, cs, N, Ctot, H, W](Tape<T>& t, const Tensor<T>& g) {
    int coff = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
      Tensor<T> gx = Tensor<T>::zeros({N, cs[i], H, W});
      for (int n = 0; n < N; ++n) {
        std::copy(g.data.begin() + (static_cast<size_t>(n) * Ctot + coff) * H * W,
                  g.data.begin() + (static_cast<size_t>(n) * Ctot + coff + cs[i]) * H * W,
                  gx.data.begin() + static_cast<size_t>(n) * cs[i] * H * W);
      }
      t.accumulate(xs[i], gx);
      coff += cs[i];
    }
  });
}

// Channel gather: out[:, i] = x[:, indices[i]]. Covers both the partial
// channel split and the post-concat channel shuffle.
template <typename T>
Var gather_channels(Tape<T>& tape, Var x, const std::vector<int>& indices) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 4, "gather_channels", "expected NCHW, got " + shape_str(xv.shape));
  int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  for (int i : indices)
    require(i >= 0 && i < C, "gather_channels", "channel index " + std::to_string(i) + " out of " + std::to_string(C));
  int Co = static_cast<int>(indices.size());
  Tensor<T> out = Tensor<T>::zeros({N, Co, H, W});
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < Co; ++i)
      std::copy(xv.data.begin() + (static_cast<size_t>(n) * C + indices[i]) * H * W,
                xv.data.begin() + (static_cast<size_t>(n) * C + indices[i] + 1) * H * W,
                out.data.begin() + (static_cast<size_t>(n) * Co + i) * H * W);
  return tape.node(std::move(out), {x}, [x, indices, N, C, H, W, Co](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = Tensor<T>::zeros({N, C, H, W});
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < Co; ++i) {
        size_t src = (static_cast<size_t>(n) * Co + i) * H * W;
        size_t dst = (static_cast<size_t>(n) * C + indices[i]) * H * W;
        for (int p = 0; p < H * W; ++p) gx.data[dst + p] += g.data[src + p];
      }
    t.accumulate(x, gx);
  });
}

// 1-D gather: out[i] = x[indices[i]].
template <typename T>
Var gather(Tape<T>& tape, Var x, const std::vector<int>& indices) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 1, "gather", "expected vector, got " + shape_str(xv.shape));
  int n = xv.shape[0];
  Tensor<T> out = Tensor<T>::zeros({static_cast<int>(indices.size())});
  for (size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < n, "gather", "index out of range");
    out.data[i] = xv.data[indices[i]];
  }
  return tape.node(std::move(out), {x}, [x, indices, n](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = Tensor<T>::zeros({n});
    for (size_t i = 0; i < indices.size(); ++i) gx.data[indices[i]] += g.data[i];
    t.accumulate(x, gx);
  });
}

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, const std::vector<int>& labels) {
  const Tensor<T>& lv = tape.value(logits);
  require(lv.rank() == 2, "cross_entropy", "expected [N,C] logits, got " + shape_str(lv.shape));
  int N = lv.shape[0], C = lv.shape[1];
  require(static_cast<int>(labels.size()) == N, "cross_entropy",
          "labels " + std::to_string(labels.size()) + " vs batch " + std::to_string(N));
  for (int y : labels) {
    if (y < 0 || y >= C)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of [0," +
                                  std::to_string(C) + ")");
  }
  Tensor<T> probs = Tensor<T>::zeros({N, C});
  double loss = 0;
  for (int n = 0; n < N; ++n) {
    const T* p = lv.data.data() + static_cast<size_t>(n) * C;
    T* q = probs.data.data() + static_cast<size_t>(n) * C;
    T mx = *std::max_element(p, p + C);
    double z = 0;
    for (int c = 0; c < C; ++c) z += std::exp(static_cast<double>(p[c] - mx));
    double lse = std::log(z) + static_cast<double>(mx);
    for (int c = 0; c < C; ++c) q[c] = static_cast<T>(std::exp(static_cast<double>(p[c]) - lse));
    loss += lse - static_cast<double>(p[labels[n]]);
  }
  loss /= N;
  return tape.node(Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                   [logits, probs, labels, N, C](Tape<T>& t, const Tensor<T>& g) {
                     Tensor<T> gl = probs;
                     T scale = g.data[0] / static_cast<T>(N);
                     for (int n = 0; n < N; ++n) {
                       T* p = gl.data.data() + static_cast<size_t>(n) * C;
                       p[labels[n]] -= T(1);
                       for (int c = 0; c < C; ++c) p[c] *= scale;
                     }
                     t.accumulate(logits, gl);
                   });
}

}  // namespace confopt::ops
