#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "prostseg/nn/gemm.hpp"
#include "prostseg/nn/graph.hpp"
#include "prostseg/nn/tensor.hpp"

namespace prostseg::nn {

namespace detail {

/// Unrolls the KxK receptive field of every output pixel into a row of
/// `col` (H*W rows, K*K*C columns), zero-padded at the borders.
template <typename T>
void im2col(const T* x, int H, int W, int C, int K, T* col) {
  const int pad = K / 2;
  const int kkc = K * K * C;
  for (int oy = 0; oy < H; ++oy) {
    for (int ox = 0; ox < W; ++ox) {
      T* dst = col + (static_cast<std::size_t>(oy) * W + ox) * kkc;
      for (int ky = 0; ky < K; ++ky) {
        const int iy = oy + ky - pad;
        for (int kx = 0; kx < K; ++kx) {
          const int ix = ox + kx - pad;
          if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
            std::memset(dst, 0, sizeof(T) * C);
          } else {
            std::memcpy(dst, x + (static_cast<std::size_t>(iy) * W + ix) * C, sizeof(T) * C);
          }
          dst += C;
        }
      }
    }
  }
}

/// Scatter-add inverse of im2col.
template <typename T>
void col2im_add(const T* col, int H, int W, int C, int K, T* x) {
  const int pad = K / 2;
  for (int oy = 0; oy < H; ++oy) {
    for (int ox = 0; ox < W; ++ox) {
      const T* src = col + (static_cast<std::size_t>(oy) * W + ox) * K * K * C;
      for (int ky = 0; ky < K; ++ky) {
        const int iy = oy + ky - pad;
        for (int kx = 0; kx < K; ++kx) {
          const int ix = ox + kx - pad;
          if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
            T* dst = x + (static_cast<std::size_t>(iy) * W + ix) * C;
            for (int c = 0; c < C; ++c) dst[c] += src[c];
          }
          src += C;
        }
      }
    }
  }
}

}  // namespace detail

/// Same-padding stride-1 convolution. Weights are (kh, kw, cin, cout) in the
/// tensor's four slots; bias is (1,1,1,cout).
template <typename T>
NodeRef<T> conv2d(const NodeRef<T>& x, const NodeRef<T>& w, const NodeRef<T>& b) {
  const int K = w->value.n;
  const int Cin = w->value.w, Cout = w->value.c;
  if (w->value.h != K || (K != 1 && K != 3))
    throw ShapeError("conv2d: unsupported kernel " + w->value.shape_str());
  if (x->value.c != Cin)
    throw ShapeError("conv2d: input channels " + x->value.shape_str() + " do not match weights " +
                     w->value.shape_str());
  const int N = x->value.n, H = x->value.h, W = x->value.w;
  const int HW = H * W, KKC = K * K * Cin;

  Tensor<T> y(N, H, W, Cout);
  {
    std::vector<T> col;
    if (K != 1) col.resize(static_cast<std::size_t>(HW) * KKC);
    for (int n = 0; n < N; ++n) {
      const T* xn = x->value.data.data() + static_cast<std::size_t>(n) * HW * Cin;
      T* yn = y.data.data() + static_cast<std::size_t>(n) * HW * Cout;
      if (K == 1) {
        gemm(false, false, HW, Cout, Cin, T{1}, xn, Cin, w->value.data.data(), Cout, T{0}, yn, Cout);
      } else {
        detail::im2col(xn, H, W, Cin, K, col.data());
        gemm(false, false, HW, Cout, KKC, T{1}, col.data(), KKC, w->value.data.data(), Cout, T{0},
             yn, Cout);
      }
    }
    const T* bias = b->value.data.data();
    T* yd = y.data.data();
    for (std::size_t i = 0; i < y.size(); ++i) yd[i] += bias[i % Cout];
  }

  auto out = make_node(std::move(y));
  if (any_requires_grad<T>({&x, &w, &b})) {
    out->requires_grad = true;
    out->parents = {x, w, b};
    Node<T>*o = out.get(), *xp = x.get(), *wp = w.get(), *bp = b.get();
    out->backprop = [o, xp, wp, bp, N, H, W, Cin, Cout, K, HW, KKC]() {
      std::vector<T> col, dcol;
      if (K != 1) {
        col.resize(static_cast<std::size_t>(HW) * KKC);
        dcol.resize(static_cast<std::size_t>(HW) * KKC);
      }
      for (int n = 0; n < N; ++n) {
        const T* xn = xp->value.data.data() + static_cast<std::size_t>(n) * HW * Cin;
        const T* dyn = o->grad.data.data() + static_cast<std::size_t>(n) * HW * Cout;
        if (K == 1) {
          if (wp->requires_grad)
            gemm(true, false, Cin, Cout, HW, T{1}, xn, Cin, dyn, Cout, T{1},
                 wp->grad.data.data(), Cout);
          if (xp->requires_grad) {
            T* dxn = xp->grad.data.data() + static_cast<std::size_t>(n) * HW * Cin;
            gemm(false, true, HW, Cin, Cout, T{1}, dyn, Cout, wp->value.data.data(), Cout, T{1},
                 dxn, Cin);
          }
        } else {
          detail::im2col(xn, H, W, Cin, K, col.data());
          if (wp->requires_grad)
            gemm(true, false, KKC, Cout, HW, T{1}, col.data(), KKC, dyn, Cout, T{1},
                 wp->grad.data.data(), Cout);
          if (xp->requires_grad) {
            gemm(false, true, HW, KKC, Cout, T{1}, dyn, Cout, wp->value.data.data(), Cout, T{0},
                 dcol.data(), KKC);
            T* dxn = xp->grad.data.data() + static_cast<std::size_t>(n) * HW * Cin;
            detail::col2im_add(dcol.data(), H, W, Cin, K, dxn);
          }
        }
      }
      if (bp->requires_grad) {
        T* db = bp->grad.data.data();
        const T* dy = o->grad.data.data();
        for (std::size_t i = 0; i < o->grad.size(); ++i) db[i % Cout] += dy[i];
      }
    };
  }
  return out;
}

/// Channel-wise batch normalization. In training mode statistics come from
/// the batch and `run_mean`/`run_var` are updated in place; in inference
/// mode the running statistics are used and nothing is mutated.
template <typename T>
NodeRef<T> batch_norm(const NodeRef<T>& x, const NodeRef<T>& gamma, const NodeRef<T>& beta,
                      Tensor<T>* run_mean, Tensor<T>* run_var, bool training,
                      double momentum = 0.9, double eps = 1e-5) {
  const int C = x->value.c;
  if (gamma->value.size() != static_cast<std::size_t>(C) || beta->value.size() != static_cast<std::size_t>(C))
    throw ShapeError("batch_norm: gamma/beta must have one value per channel");
  const std::size_t total = x->value.size();
  const std::size_t M = total / C;  // samples per channel

  auto mean = std::make_shared<std::vector<double>>(C, 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(C, 0.0);
  if (training) {
    std::vector<double> var(C, 0.0);
    const T* xd = x->value.data.data();
    for (std::size_t i = 0; i < total; ++i) (*mean)[i % C] += xd[i];
    for (int c = 0; c < C; ++c) (*mean)[c] /= static_cast<double>(M);
    for (std::size_t i = 0; i < total; ++i) {
      double d = xd[i] - (*mean)[i % C];
      var[i % C] += d * d;
    }
    for (int c = 0; c < C; ++c) {
      var[c] /= static_cast<double>(M);
      (*inv_std)[c] = 1.0 / std::sqrt(var[c] + eps);
    }
    if (run_mean && run_var) {
      for (int c = 0; c < C; ++c) {
        run_mean->data[c] = static_cast<T>(momentum * run_mean->data[c] + (1 - momentum) * (*mean)[c]);
        run_var->data[c] = static_cast<T>(momentum * run_var->data[c] + (1 - momentum) * var[c]);
      }
    }
  } else {
    if (!run_mean || !run_var) throw ShapeError("batch_norm: inference requires running statistics");
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = run_mean->data[c];
      (*inv_std)[c] = 1.0 / std::sqrt(static_cast<double>(run_var->data[c]) + eps);
    }
  }

  // xhat is kept for the backward pass
  auto xhat = std::make_shared<std::vector<T>>(total);
  {
    const T* xd = x->value.data.data();
    for (std::size_t i = 0; i < total; ++i)
      (*xhat)[i] = static_cast<T>((xd[i] - (*mean)[i % C]) * (*inv_std)[i % C]);
  }
  Tensor<T> y(x->value.n, x->value.h, x->value.w, C);
  {
    const T* g = gamma->value.data.data();
    const T* bt = beta->value.data.data();
    for (std::size_t i = 0; i < total; ++i) y.data[i] = g[i % C] * (*xhat)[i] + bt[i % C];
  }

  auto out = make_node(std::move(y));
  if (any_requires_grad<T>({&x, &gamma, &beta})) {
    out->requires_grad = true;
    out->parents = {x, gamma, beta};
    Node<T>*o = out.get(), *xp = x.get(), *gp = gamma.get(), *bp = beta.get();
    out->backprop = [o, xp, gp, bp, xhat, inv_std, C, M, total, training]() {
      const T* dy = o->grad.data.data();
      std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
      for (std::size_t i = 0; i < total; ++i) {
        sum_dy[i % C] += dy[i];
        sum_dy_xhat[i % C] += static_cast<double>(dy[i]) * (*xhat)[i];
      }
      if (gp->requires_grad)
        for (int c = 0; c < C; ++c) gp->grad.data[c] += static_cast<T>(sum_dy_xhat[c]);
      if (bp->requires_grad)
        for (int c = 0; c < C; ++c) bp->grad.data[c] += static_cast<T>(sum_dy[c]);
      if (xp->requires_grad) {
        T* dx = xp->grad.data.data();
        const T* g = gp->value.data.data();
        if (training) {
          // gradients flow through the batch statistics as well
          const double invM = 1.0 / static_cast<double>(M);
          for (std::size_t i = 0; i < total; ++i) {
            const int c = static_cast<int>(i % C);
            dx[i] += static_cast<T>(g[c] * (*inv_std)[c] *
                                    (dy[i] - invM * (sum_dy[c] + (*xhat)[i] * sum_dy_xhat[c])));
          }
        } else {
          for (std::size_t i = 0; i < total; ++i) {
            const int c = static_cast<int>(i % C);
            dx[i] += static_cast<T>(g[c] * (*inv_std)[c] * dy[i]);
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
NodeRef<T> relu(const NodeRef<T>& x) {
  Tensor<T> y = x->value;
  for (auto& v : y.data) v = v > T{0} ? v : T{0};
  auto out = make_node(std::move(y));
  if (any_requires_grad<T>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    Node<T>*o = out.get(), *xp = x.get();
    out->backprop = [o, xp]() {
      if (!xp->requires_grad) return;
      for (std::size_t i = 0; i < o->grad.size(); ++i)
        if (xp->value.data[i] > T{0}) xp->grad.data[i] += o->grad.data[i];
    };
  }
  return out;
}

template <typename T>
NodeRef<T> sigmoid(const NodeRef<T>& x) {
  Tensor<T> y = x->value;
  for (auto& v : y.data) v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  auto out = make_node(std::move(y));
  if (any_requires_grad<T>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    Node<T>*o = out.get(), *xp = x.get();
    out->backprop = [o, xp]() {
      if (!xp->requires_grad) return;
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        const T s = o->value.data[i];
        xp->grad.data[i] += o->grad.data[i] * s * (T{1} - s);
      }
    };
  }
  return out;
}

/// Numerically stable per-pixel softmax over the channel dimension.
template <typename T>
NodeRef<T> softmax_channels(const NodeRef<T>& x) {
  const int C = x->value.c;
  Tensor<T> y(x->value.n, x->value.h, x->value.w, C);
  const std::size_t pixels = x->value.size() / C;
  for (std::size_t p = 0; p < pixels; ++p) {
    const T* in = x->value.data.data() + p * C;
    T* outp = y.data.data() + p * C;
    T mx = in[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, in[c]);
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      double e = std::exp(static_cast<double>(in[c] - mx));
      outp[c] = static_cast<T>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int c = 0; c < C; ++c) outp[c] = static_cast<T>(outp[c] * inv);
  }
  auto out = make_node(std::move(y));
  if (any_requires_grad<T>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    Node<T>*o = out.get(), *xp = x.get();
    out->backprop = [o, xp, C, pixels]() {
      if (!xp->requires_grad) return;
      for (std::size_t p = 0; p < pixels; ++p) {
        const T* yv = o->value.data.data() + p * C;
        const T* dy = o->grad.data.data() + p * C;
        T* dx = xp->grad.data.data() + p * C;
        double dot = 0.0;
        for (int c = 0; c < C; ++c) dot += static_cast<double>(dy[c]) * yv[c];
        for (int c = 0; c < C; ++c) dx[c] += static_cast<T>(yv[c] * (dy[c] - dot));
      }
    };
  }
  return out;
}

/// 2x2 max pooling, stride 2. Ties resolve to the first element in scan
/// order, which keeps backward routing deterministic.
template <typename T>
NodeRef<T> max_pool2(const NodeRef<T>& x) {
  const int N = x->value.n, H = x->value.h, W = x->value.w, C = x->value.c;
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError("max_pool2: spatial dims must be even, got " + x->value.shape_str());
  const int OH = H / 2, OW = W / 2;
  Tensor<T> y(N, OH, OW, C);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(y.size());
  for (int n = 0; n < N; ++n)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox)
        for (int c = 0; c < C; ++c) {
          T best{};
          std::uint32_t best_idx = 0;
          bool first = true;
          for (int ky = 0; ky < 2; ++ky)
            for (int kx = 0; kx < 2; ++kx) {
              std::size_t idx =
                  ((static_cast<std::size_t>(n) * H + (2 * oy + ky)) * W + (2 * ox + kx)) * C + c;
              T v = x->value.data[idx];
              if (first || v > best) {
                best = v;
                best_idx = static_cast<std::uint32_t>(idx);
                first = false;
              }
            }
          std::size_t oidx = ((static_cast<std::size_t>(n) * OH + oy) * OW + ox) * C + c;
          y.data[oidx] = best;
          (*argmax)[oidx] = best_idx;
        }
  auto out = make_node(std::move(y));
  if (any_requires_grad<T>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    Node<T>*o = out.get(), *xp = x.get();
    out->backprop = [o, xp, argmax]() {
      if (!xp->requires_grad) return;
      for (std::size_t i = 0; i < o->grad.size(); ++i)
        xp->grad.data[(*argmax)[i]] += o->grad.data[i];
    };
  }
  return out;
}

/// Nearest-neighbor 2x upsampling.
template <typename T>
NodeRef<T> upsample2(const NodeRef<T>& x) {
  const int N = x->value.n, H = x->value.h, W = x->value.w, C = x->value.c;
  Tensor<T> y(N, 2 * H, 2 * W, C);
  for (int n = 0; n < N; ++n)
    for (int oy = 0; oy < 2 * H; ++oy)
      for (int ox = 0; ox < 2 * W; ++ox)
        std::memcpy(&y.at(n, oy, ox, 0), &x->value.at(n, oy / 2, ox / 2, 0), sizeof(T) * C);
  auto out = make_node(std::move(y));
  if (any_requires_grad<T>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    Node<T>*o = out.get(), *xp = x.get();
    out->backprop = [o, xp, N, H, W, C]() {
      if (!xp->requires_grad) return;
      for (int n = 0; n < N; ++n)
        for (int oy = 0; oy < 2 * H; ++oy)
          for (int ox = 0; ox < 2 * W; ++ox) {
            const T* src = &o->grad.at(n, oy, ox, 0);
            T* dst = &xp->grad.at(n, oy / 2, ox / 2, 0);
            for (int c = 0; c < C; ++c) dst[c] += src[c];
          }
    };
  }
  return out;
}

/// Concatenation along the channel dimension.
template <typename T>
NodeRef<T> concat_channels(const std::vector<NodeRef<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const int N = xs[0]->value.n, H = xs[0]->value.h, W = xs[0]->value.w;
  int C = 0;
  for (const auto& x : xs) {
    if (x->value.n != N || x->value.h != H || x->value.w != W)
      throw ShapeError("concat_channels: spatial mismatch " + x->value.shape_str());
    C += x->value.c;
  }
  Tensor<T> y(N, H, W, C);
  const std::size_t pixels = static_cast<std::size_t>(N) * H * W;
  for (std::size_t p = 0; p < pixels; ++p) {
    T* dst = y.data.data() + p * C;
    for (const auto& x : xs) {
      std::memcpy(dst, x->value.data.data() + p * x->value.c, sizeof(T) * x->value.c);
      dst += x->value.c;
    }
  }
  auto out = make_node(std::move(y));
  bool need = false;
  if (g_grad_enabled)
    for (const auto& x : xs)
      if (x->requires_grad) need = true;
  if (need) {
    out->requires_grad = true;
    out->parents.assign(xs.begin(), xs.end());
    Node<T>* o = out.get();
    std::vector<Node<T>*> raw;
    for (const auto& x : xs) raw.push_back(x.get());
    out->backprop = [o, raw, pixels, C]() {
      for (std::size_t p = 0; p < pixels; ++p) {
        const T* src = o->grad.data.data() + p * C;
        for (Node<T>* x : raw) {
          if (x->requires_grad) {
            T* dst = x->grad.data.data() + p * x->value.c;
            for (int c = 0; c < x->value.c; ++c) dst[c] += src[c];
          }
          src += x->value.c;
        }
      }
    };
  }
  return out;
}

template <typename T>
NodeRef<T> add(const NodeRef<T>& a, const NodeRef<T>& b) {
  check_same_shape(a->value, b->value, "add");
  Tensor<T> y = a->value;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += b->value.data[i];
  auto out = make_node(std::move(y));
  if (any_requires_grad<T>({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    Node<T>*o = out.get(), *ap = a.get(), *bp = b.get();
    out->backprop = [o, ap, bp]() {
      for (Node<T>* p : {ap, bp})
        if (p->requires_grad)
          for (std::size_t i = 0; i < o->grad.size(); ++i) p->grad.data[i] += o->grad.data[i];
    };
  }
  return out;
}

/// x:(N,H,W,C) scaled per pixel by alpha:(N,H,W,1), broadcast over channels.
template <typename T>
NodeRef<T> mul_channel_broadcast(const NodeRef<T>& x, const NodeRef<T>& alpha) {
  if (alpha->value.c != 1 || alpha->value.n != x->value.n || alpha->value.h != x->value.h ||
      alpha->value.w != x->value.w)
    throw ShapeError("mul_channel_broadcast: coefficient map must be " + x->value.shape_str() +
                     " with one channel, got " + alpha->value.shape_str());
  const int C = x->value.c;
  const std::size_t pixels = x->value.size() / C;
  Tensor<T> y = x->value;
  for (std::size_t p = 0; p < pixels; ++p) {
    const T a = alpha->value.data[p];
    T* row = y.data.data() + p * C;
    for (int c = 0; c < C; ++c) row[c] *= a;
  }
  auto out = make_node(std::move(y));
  if (any_requires_grad<T>({&x, &alpha})) {
    out->requires_grad = true;
    out->parents = {x, alpha};
    Node<T>*o = out.get(), *xp = x.get(), *ap = alpha.get();
    out->backprop = [o, xp, ap, pixels, C]() {
      for (std::size_t p = 0; p < pixels; ++p) {
        const T* dy = o->grad.data.data() + p * C;
        if (xp->requires_grad) {
          const T a = ap->value.data[p];
          T* dx = xp->grad.data.data() + p * C;
          for (int c = 0; c < C; ++c) dx[c] += dy[c] * a;
        }
        if (ap->requires_grad) {
          const T* xv = xp->value.data.data() + p * C;
          double s = 0.0;
          for (int c = 0; c < C; ++c) s += static_cast<double>(dy[c]) * xv[c];
          ap->grad.data[p] += static_cast<T>(s);
        }
      }
    };
  }
  return out;
}

inline constexpr double kCceEpsilon = 1e-7;

/// Mean over batch and pixels of -sum_c target_c * log(pred_c), predictions
/// clamped to [1e-7, 1] before the logarithm. Plain-value flavor.
template <typename T>
double cce_value(const Tensor<T>& pred, const Tensor<T>& target) {
  check_same_shape(pred, target, "cce_loss");
  const int C = pred.c;
  const std::size_t pixels = pred.size() / C;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double t = target.data[i];
    if (t != 0.0) {
      double p = std::clamp(static_cast<double>(pred.data[i]), kCceEpsilon, 1.0);
      acc -= t * std::log(p);
    }
  }
  return acc / static_cast<double>(pixels);
}

/// Autograd flavor of the categorical cross-entropy; `target` is constant.
template <typename T>
NodeRef<T> cce_loss(const NodeRef<T>& probs, const Tensor<T>& target) {
  check_same_shape(probs->value, target, "cce_loss");
  const int C = probs->value.c;
  const std::size_t pixels = probs->value.size() / C;
  auto out = make_node(Tensor<T>::scalar(static_cast<T>(cce_value(probs->value, target))));
  if (any_requires_grad<T>({&probs})) {
    out->requires_grad = true;
    out->parents = {probs};
    Node<T>*o = out.get(), *pp = probs.get();
    Tensor<T> tgt = target;
    out->backprop = [o, pp, tgt = std::move(tgt), pixels]() {
      if (!pp->requires_grad) return;
      const T g = o->grad.data[0];
      const double invM = 1.0 / static_cast<double>(pixels);
      for (std::size_t i = 0; i < tgt.size(); ++i) {
        const double t = tgt.data[i];
        if (t == 0.0) continue;
        const double p = static_cast<double>(pp->value.data[i]);
        if (p < kCceEpsilon) continue;  // clamped region has zero slope
        pp->grad.data[i] += static_cast<T>(-g * t * invM / std::min(p, 1.0));
      }
    };
  }
  return out;
}

}  // namespace prostseg::nn
