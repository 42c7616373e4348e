// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "splitfit/tensor.hpp"

namespace splitfit {

// Layer vocabulary. Blocks are first-class and carry a nested child sequence;
// the skip_* markers express residual/dense wiring in flattened form so a
// decomposed block is executable as a plain layer list:
//   skip_save   push current activation on the skip stack (pass-through)
//   skip_add    pop and add elementwise (residual shortcut)
//   skip_concat pop and concatenate popped-first along channels (dense wiring)
enum class LayerKind : uint8_t {
  conv,
  deconv,
  batch_norm,
  relu,
  pool,      // max pool
  avg_pool,
  fully_connected,
  block,
  skip_save,
  skip_add,
  skip_concat,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::deconv: return "deconv";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::relu: return "relu";
    case LayerKind::pool: return "pool";
    case LayerKind::avg_pool: return "avg_pool";
    case LayerKind::fully_connected: return "fully_connected";
    case LayerKind::block: return "block";
    case LayerKind::skip_save: return "skip_save";
    case LayerKind::skip_add: return "skip_add";
    case LayerKind::skip_concat: return "skip_concat";
  }
  return "?";
}

inline LayerKind layer_kind_from_name(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(LayerKind::skip_concat); ++i) {
    auto k = static_cast<LayerKind>(i);
    if (s == layer_kind_name(k)) return k;
  }
  throw IoError("unknown layer kind '" + s + "'");
}

// One layer: structural hyperparameters plus its learnable parameters.
// `id` is the 1-based position within the owning graph (blocks count as one).
// `locked` marks parameters that must never be trained regardless of the
// active freeze set (used for verbatim-copied sub-sequences).
template <typename T>
struct Layer {
  int id = 0;
  LayerKind kind = LayerKind::relu;
  int out_channels = 0;  // conv/deconv/fc output width
  int kernel = 0;        // conv/deconv/pool kernel
  int stride = 1;
  int padding = 0;
  bool locked = false;
  std::string tag;  // optional structural label ("bottleneck", "block1", ...)

  std::vector<Layer<T>> children;  // kind == block only

  // parameters (layout documented per kind)
  Tensor<T> weight;  // conv: (OC,IC,KH,KW)  deconv: (IC,OC,KH,KW)  fc: (OUT,IN)
  Tensor<T> bias;    // (OC) / (OUT)
  Tensor<T> gamma, beta;                  // batch_norm scale/shift, (C)
  Tensor<T> running_mean, running_var;    // batch_norm buffers, (C)

  bool has_params() const {
    return kind == LayerKind::conv || kind == LayerKind::deconv ||
           kind == LayerKind::fully_connected || kind == LayerKind::batch_norm;
  }

  int64_t param_count() const {
    int64_t n = weight.size() + bias.size() + gamma.size() + beta.size();
    for (const auto& c : children) n += c.param_count();
    return n;
  }

  template <typename U>
  Layer<U> cast() const {
    Layer<U> l;
    l.id = id;
    l.kind = kind;
    l.out_channels = out_channels;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    l.locked = locked;
    l.tag = tag;
    for (const auto& c : children) l.children.push_back(c.template cast<U>());
    l.weight = weight.template cast<U>();
    l.bias = bias.template cast<U>();
    l.gamma = gamma.template cast<U>();
    l.beta = beta.template cast<U>();
    l.running_mean = running_mean.template cast<U>();
    l.running_var = running_var.template cast<U>();
    return l;
  }
};

namespace detail {

inline int conv_out_dim(int in, int kernel, int stride, int padding) {
  int v = (in + 2 * padding - kernel) / stride + 1;
  if (v <= 0) throw ShapeError("convolution collapses spatial dim to " + std::to_string(v));
  return v;
}

inline int deconv_out_dim(int in, int kernel, int stride, int padding) {
  int v = (in - 1) * stride - 2 * padding + kernel;
  if (v <= 0) throw ShapeError("deconvolution collapses spatial dim to " + std::to_string(v));
  return v;
}

// Output-index window [lo, hi) such that 0 <= o*stride - padding + k < limit.
inline void conv_bounds(int out_dim, int stride, int padding, int k, int limit, int& lo, int& hi) {
  int a = padding - k;  // need o*stride >= a
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  int b = limit - 1 + padding - k;  // need o*stride <= b
  hi = b < 0 ? 0 : b / stride + 1;
  if (hi > out_dim) hi = out_dim;
  if (lo > hi) lo = hi;
}

template <typename T>
inline T dot_range(const T* a, const T* b, int n) {
  T acc = 0;
#pragma omp simd reduction(+ : acc)
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// Dot-product accumulator that carries SIMD lanes across multiple short rows
// and reduces horizontally once. One fixed summation order per (lane count,
// row sequence), so results are reproducible.
template <typename T>
struct LaneAcc {
  static constexpr int kLanes = 16;
  T lane[kLanes] = {};
  void madd(const T* a, const T* b, int n) {
    int i = 0;
    for (; i + kLanes <= n; i += kLanes) {
#pragma omp simd
      for (int k = 0; k < kLanes; ++k) lane[k] += a[i + k] * b[i + k];
    }
    if (i + 8 <= n) {
#pragma omp simd
      for (int k = 0; k < 8; ++k) lane[k] += a[i + k] * b[i + k];
      i += 8;
    }
    if (i + 4 <= n) {
#pragma omp simd
      for (int k = 0; k < 4; ++k) lane[k] += a[i + k] * b[i + k];
      i += 4;
    }
    for (; i < n; ++i) lane[i % 4] += a[i] * b[i];
  }
  T total() const {
    T s = 0;
    for (int k = 0; k < kLanes; ++k) s += lane[k];
    return s;
  }
};

template <typename T>
inline void axpy_range(T* y, const T* x, T a, int n) {
#pragma omp simd
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// kernels: forward / backward per layer kind, batched (N,C,H,W)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         int stride, int padding) {
  const int N = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  if (w.dim(1) != IC)
    throw ShapeError("conv expects " + std::to_string(w.dim(1)) + " input channels, got " +
                     std::to_string(IC));
  const int OH = detail::conv_out_dim(H, KH, stride, padding);
  const int OW = detail::conv_out_dim(W, KW, stride, padding);
  Tensor<T> y({N, OC, OH, OW});
  for (int n = 0; n < N; ++n) {
    for (int oc = 0; oc < OC; ++oc) {
      T* yp = &y.at(n, oc, 0, 0);
      const T bv = b.empty() ? T(0) : b.data[oc];
      for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) yp[i] = bv;
      for (int ic = 0; ic < IC; ++ic) {
        const T* xp = &x.at(n, ic, 0, 0);
        for (int kh = 0; kh < KH; ++kh) {
          for (int kw = 0; kw < KW; ++kw) {
            const T wv = w.data[((static_cast<size_t>(oc) * IC + ic) * KH + kh) * KW + kw];
            int ow_lo, ow_hi;
            detail::conv_bounds(OW, stride, padding, kw, W, ow_lo, ow_hi);
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * stride - padding + kh;
              if (ih < 0 || ih >= H) continue;
              T* yrow = yp + static_cast<size_t>(oh) * OW;
              const T* xrow = xp + static_cast<size_t>(ih) * W - padding + kw;
              if (stride == 1) {
                detail::axpy_range(yrow + ow_lo, xrow + ow_lo, wv, ow_hi - ow_lo);
              } else {
                for (int ow = ow_lo; ow < ow_hi; ++ow) yrow[ow] += wv * xrow[ow * stride];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     int stride, int padding, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const int N = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const int OH = dy.dim(2), OW = dy.dim(3);
  if (dx) *dx = Tensor<T>({N, IC, H, W});
  if (dw) *dw = Tensor<T>(w.shape);
  if (db) {
    *db = Tensor<T>({OC});
    for (int n = 0; n < N; ++n)
      for (int oc = 0; oc < OC; ++oc) {
        const T* dyp = &dy.at(n, oc, 0, 0);
        T acc = 0;
        for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) acc += dyp[i];
        db->data[oc] += acc;
      }
  }
  for (int n = 0; n < N; ++n) {
    for (int oc = 0; oc < OC; ++oc) {
      const T* dyp = &dy.at(n, oc, 0, 0);
      for (int ic = 0; ic < IC; ++ic) {
        const T* xp = &x.at(n, ic, 0, 0);
        T* dxp = dx ? &dx->at(n, ic, 0, 0) : nullptr;
        for (int kh = 0; kh < KH; ++kh) {
          for (int kw = 0; kw < KW; ++kw) {
            const size_t widx = ((static_cast<size_t>(oc) * IC + ic) * KH + kh) * KW + kw;
            const T wv = w.data[widx];
            detail::LaneAcc<T> wacc;
            int ow_lo, ow_hi;
            detail::conv_bounds(OW, stride, padding, kw, W, ow_lo, ow_hi);
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * stride - padding + kh;
              if (ih < 0 || ih >= H) continue;
              const T* dyrow = dyp + static_cast<size_t>(oh) * OW;
              const T* xrow = xp + static_cast<size_t>(ih) * W - padding + kw;
              if (dxp) {
                T* dxrow = dxp + static_cast<size_t>(ih) * W - padding + kw;
                if (stride == 1) {
                  detail::axpy_range(dxrow + ow_lo, dyrow + ow_lo, wv, ow_hi - ow_lo);
                } else {
                  for (int ow = ow_lo; ow < ow_hi; ++ow) dxrow[ow * stride] += wv * dyrow[ow];
                }
              }
              if (dw) {
                if (stride == 1) {
                  wacc.madd(xrow + ow_lo, dyrow + ow_lo, ow_hi - ow_lo);
                } else {
                  for (int ow = ow_lo; ow < ow_hi; ++ow)
                    wacc.lane[0] += xrow[ow * stride] * dyrow[ow];
                }
              }
            }
            if (dw) dw->data[widx] += wacc.total();
          }
        }
      }
    }
  }
}

// Transposed convolution; weight layout (IC, OC, KH, KW).
template <typename T>
Tensor<T> deconv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           int stride, int padding) {
  const int N = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (w.dim(0) != IC)
    throw ShapeError("deconv expects " + std::to_string(w.dim(0)) + " input channels, got " +
                     std::to_string(IC));
  const int OC = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const int OH = detail::deconv_out_dim(H, KH, stride, padding);
  const int OW = detail::deconv_out_dim(W, KW, stride, padding);
  Tensor<T> y({N, OC, OH, OW});
  for (int n = 0; n < N; ++n) {
    for (int oc = 0; oc < OC; ++oc) {
      T* yp = &y.at(n, oc, 0, 0);
      const T bv = b.empty() ? T(0) : b.data[oc];
      for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) yp[i] = bv;
      for (int ic = 0; ic < IC; ++ic) {
        const T* xp = &x.at(n, ic, 0, 0);
        for (int kh = 0; kh < KH; ++kh) {
          for (int kw = 0; kw < KW; ++kw) {
            const T wv = w.data[((static_cast<size_t>(ic) * OC + oc) * KH + kh) * KW + kw];
            int iw_lo, iw_hi;
            detail::conv_bounds(W, stride, padding, kw, OW, iw_lo, iw_hi);
            for (int ih = 0; ih < H; ++ih) {
              const int oh = ih * stride - padding + kh;
              if (oh < 0 || oh >= OH) continue;
              const T* xrow = xp + static_cast<size_t>(ih) * W;
              T* yrow = yp + static_cast<size_t>(oh) * OW - padding + kw;
              if (stride == 1) {
                detail::axpy_range(yrow + iw_lo, xrow + iw_lo, wv, iw_hi - iw_lo);
              } else {
                for (int iw = iw_lo; iw < iw_hi; ++iw) yrow[iw * stride] += wv * xrow[iw];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
void deconv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                       int stride, int padding, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const int N = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OC = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const int OH = dy.dim(2), OW = dy.dim(3);
  if (dx) *dx = Tensor<T>({N, IC, H, W});
  if (dw) *dw = Tensor<T>(w.shape);
  if (db) {
    *db = Tensor<T>({OC});
    for (int n = 0; n < N; ++n)
      for (int oc = 0; oc < OC; ++oc) {
        const T* dyp = &dy.at(n, oc, 0, 0);
        T acc = 0;
        for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) acc += dyp[i];
        db->data[oc] += acc;
      }
  }
  for (int n = 0; n < N; ++n) {
    for (int ic = 0; ic < IC; ++ic) {
      const T* xp = &x.at(n, ic, 0, 0);
      T* dxp = dx ? &dx->at(n, ic, 0, 0) : nullptr;
      for (int oc = 0; oc < OC; ++oc) {
        const T* dyp = &dy.at(n, oc, 0, 0);
        for (int kh = 0; kh < KH; ++kh) {
          for (int kw = 0; kw < KW; ++kw) {
            const size_t widx = ((static_cast<size_t>(ic) * OC + oc) * KH + kh) * KW + kw;
            const T wv = w.data[widx];
            detail::LaneAcc<T> wacc;
            int iw_lo, iw_hi;
            detail::conv_bounds(W, stride, padding, kw, OW, iw_lo, iw_hi);
            for (int ih = 0; ih < H; ++ih) {
              const int oh = ih * stride - padding + kh;
              if (oh < 0 || oh >= OH) continue;
              const T* xrow = xp + static_cast<size_t>(ih) * W;
              const T* dyrow = dyp + static_cast<size_t>(oh) * OW - padding + kw;
              if (dxp) {
                T* dxrow = dxp + static_cast<size_t>(ih) * W;
                if (stride == 1) {
                  detail::axpy_range(dxrow + iw_lo, dyrow + iw_lo, wv, iw_hi - iw_lo);
                } else {
                  for (int iw = iw_lo; iw < iw_hi; ++iw) dxrow[iw] += wv * dyrow[iw * stride];
                }
              }
              if (dw) {
                if (stride == 1) {
                  wacc.madd(xrow + iw_lo, dyrow + iw_lo, iw_hi - iw_lo);
                } else {
                  for (int iw = iw_lo; iw < iw_hi; ++iw)
                    wacc.lane[0] += xrow[iw] * dyrow[iw * stride];
                }
              }
            }
            if (dw) dw->data[widx] += wacc.total();
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& x, int kernel, int stride,
                          std::vector<int32_t>* argmax) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = detail::conv_out_dim(H, kernel, stride, 0);
  const int OW = detail::conv_out_dim(W, kernel, stride, 0);
  Tensor<T> y({N, C, OH, OW});
  if (argmax) argmax->assign(y.data.size(), 0);
  size_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* xp = &x.at(n, c, 0, 0);
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++oi) {
          T best = xp[static_cast<size_t>(oh * stride) * W + ow * stride];
          int32_t besti = oh * stride * W + ow * stride;
          for (int kh = 0; kh < kernel; ++kh)
            for (int kw = 0; kw < kernel; ++kw) {
              const int ih = oh * stride + kh, iw = ow * stride + kw;
              if (ih >= H || iw >= W) continue;
              T v = xp[static_cast<size_t>(ih) * W + iw];
              if (v > best) {
                best = v;
                besti = ih * W + iw;
              }
            }
          y.data[oi] = best;
          if (argmax) (*argmax)[oi] = besti;
        }
    }
  return y;
}

template <typename T>
Tensor<T> maxpool_backward(const Shape& xshape, const std::vector<int32_t>& argmax,
                           const Tensor<T>& dy) {
  Tensor<T> dx(xshape);
  const int C = xshape[1], H = xshape[2], W = xshape[3];
  const int64_t plane = static_cast<int64_t>(H) * W;
  const int64_t oplane = static_cast<int64_t>(dy.dim(2)) * dy.dim(3);
  for (int n = 0; n < xshape[0]; ++n)
    for (int c = 0; c < C; ++c) {
      const size_t obase = (static_cast<size_t>(n) * C + c) * oplane;
      T* dxp = dx.data.data() + (static_cast<size_t>(n) * C + c) * plane;
      for (int64_t i = 0; i < oplane; ++i) dxp[argmax[obase + i]] += dy.data[obase + i];
    }
  return dx;
}

template <typename T>
Tensor<T> avgpool_forward(const Tensor<T>& x, int kernel, int stride) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = detail::conv_out_dim(H, kernel, stride, 0);
  const int OW = detail::conv_out_dim(W, kernel, stride, 0);
  Tensor<T> y({N, C, OH, OW});
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  size_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* xp = &x.at(n, c, 0, 0);
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++oi) {
          T acc = 0;
          for (int kh = 0; kh < kernel; ++kh)
            for (int kw = 0; kw < kernel; ++kw)
              acc += xp[static_cast<size_t>(oh * stride + kh) * W + ow * stride + kw];
          y.data[oi] = acc * inv;
        }
    }
  return y;
}

template <typename T>
Tensor<T> avgpool_backward(const Shape& xshape, int kernel, int stride, const Tensor<T>& dy) {
  Tensor<T> dx(xshape);
  const int C = xshape[1], W = xshape[3];
  const int OH = dy.dim(2), OW = dy.dim(3);
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  size_t oi = 0;
  for (int n = 0; n < xshape[0]; ++n)
    for (int c = 0; c < C; ++c) {
      T* dxp = &dx.at(n, c, 0, 0);
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++oi) {
          const T g = dy.data[oi] * inv;
          for (int kh = 0; kh < kernel; ++kh)
            for (int kw = 0; kw < kernel; ++kw)
              dxp[static_cast<size_t>(oh * stride + kh) * W + ow * stride + kw] += g;
        }
    }
  return dx;
}

template <typename T>
Tensor<T> fc_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int N = x.dim(0);
  const int64_t IN = x.size() / N;
  const int OUT = w.dim(0);
  if (w.dim(1) != IN)
    throw ShapeError("fully_connected expects " + std::to_string(w.dim(1)) +
                     " input features, got " + std::to_string(IN));
  Tensor<T> y({N, OUT});
  for (int n = 0; n < N; ++n) {
    const T* xp = x.data.data() + static_cast<size_t>(n) * IN;
    for (int o = 0; o < OUT; ++o) {
      const T* wp = w.data.data() + static_cast<size_t>(o) * IN;
      T acc = b.empty() ? T(0) : b.data[o];
      acc += detail::dot_range(wp, xp, static_cast<int>(IN));
      y.data[static_cast<size_t>(n) * OUT + o] = acc;
    }
  }
  return y;
}

template <typename T>
void fc_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                 Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const int N = x.dim(0);
  const int64_t IN = x.size() / N;
  const int OUT = w.dim(0);
  if (dx) *dx = Tensor<T>(x.shape);
  if (dw) *dw = Tensor<T>(w.shape);
  if (db) *db = Tensor<T>({OUT});
  for (int n = 0; n < N; ++n) {
    const T* xp = x.data.data() + static_cast<size_t>(n) * IN;
    const T* dyp = dy.data.data() + static_cast<size_t>(n) * OUT;
    T* dxp = dx ? dx->data.data() + static_cast<size_t>(n) * IN : nullptr;
    for (int o = 0; o < OUT; ++o) {
      const T g = dyp[o];
      const T* wp = w.data.data() + static_cast<size_t>(o) * IN;
      if (db) db->data[o] += g;
      if (dw) {
        T* dwp = dw->data.data() + static_cast<size_t>(o) * IN;
        detail::axpy_range(dwp, xp, g, static_cast<int>(IN));
      }
      if (dxp) detail::axpy_range(dxp, wp, g, static_cast<int>(IN));
    }
  }
}

// Saved intermediates for batch_norm backward.
template <typename T>
struct BnCtx {
  Tensor<T> mean, invstd;  // per channel; batch stats (train) or running (eval)
  bool train_mode = false;
};

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

// Batch normalization over (N,H,W) per channel. In train mode batch statistics
// normalize and running buffers are updated in place; in eval mode the running
// buffers normalize and nothing is written.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, Layer<T>& layer, bool train, BnCtx<T>* ctx) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t M = static_cast<int64_t>(N) * H * W;
  Tensor<T> mean({C}), var({C});
  if (train) {
    for (int c = 0; c < C; ++c) {
      T acc = 0;
      for (int n = 0; n < N; ++n) {
        const T* xp = &x.at(n, c, 0, 0);
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) acc += xp[i];
      }
      mean.data[c] = acc / static_cast<T>(M);
    }
    for (int c = 0; c < C; ++c) {
      T acc = 0;
      const T mu = mean.data[c];
      for (int n = 0; n < N; ++n) {
        const T* xp = &x.at(n, c, 0, 0);
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
          const T d = xp[i] - mu;
          acc += d * d;
        }
      }
      var.data[c] = acc / static_cast<T>(M);
    }
    for (int c = 0; c < C; ++c) {
      layer.running_mean.data[c] =
          static_cast<T>((1.0 - kBnMomentum) * layer.running_mean.data[c] + kBnMomentum * mean.data[c]);
      layer.running_var.data[c] =
          static_cast<T>((1.0 - kBnMomentum) * layer.running_var.data[c] + kBnMomentum * var.data[c]);
    }
  } else {
    mean = layer.running_mean;
    var = layer.running_var;
  }
  Tensor<T> invstd({C});
  for (int c = 0; c < C; ++c)
    invstd.data[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var.data[c]) + kBnEps));
  Tensor<T> y(x.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* xp = &x.at(n, c, 0, 0);
      T* yp = &y.at(n, c, 0, 0);
      const T mu = mean.data[c], is = invstd.data[c];
      const T g = layer.gamma.data[c], bb = layer.beta.data[c];
      for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) yp[i] = g * (xp[i] - mu) * is + bb;
    }
  if (ctx) {
    ctx->mean = std::move(mean);
    ctx->invstd = std::move(invstd);
    ctx->train_mode = train;
  }
  return y;
}

template <typename T>
void batchnorm_backward(const Tensor<T>& x, const Layer<T>& layer, const BnCtx<T>& ctx,
                        const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dgamma, Tensor<T>* dbeta) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t M = static_cast<int64_t>(N) * H * W;
  const int64_t plane = static_cast<int64_t>(H) * W;
  if (dx) *dx = Tensor<T>(x.shape);
  if (dgamma) *dgamma = Tensor<T>({C});
  if (dbeta) *dbeta = Tensor<T>({C});
  for (int c = 0; c < C; ++c) {
    const T mu = ctx.mean.data[c], is = ctx.invstd.data[c], g = layer.gamma.data[c];
    T sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < N; ++n) {
      const T* xp = &x.at(n, c, 0, 0);
      const T* dyp = &dy.at(n, c, 0, 0);
      for (int64_t i = 0; i < plane; ++i) {
        sum_dy += dyp[i];
        sum_dy_xhat += dyp[i] * (xp[i] - mu) * is;
      }
    }
    if (dgamma) dgamma->data[c] = sum_dy_xhat;
    if (dbeta) dbeta->data[c] = sum_dy;
    if (!dx) continue;
    if (ctx.train_mode) {
      const T invM = T(1) / static_cast<T>(M);
      for (int n = 0; n < N; ++n) {
        const T* xp = &x.at(n, c, 0, 0);
        const T* dyp = &dy.at(n, c, 0, 0);
        T* dxp = &dx->at(n, c, 0, 0);
        for (int64_t i = 0; i < plane; ++i) {
          const T xhat = (xp[i] - mu) * is;
          dxp[i] = g * is * (dyp[i] - sum_dy * invM - xhat * sum_dy_xhat * invM);
        }
      }
    } else {
      for (int n = 0; n < N; ++n) {
        const T* dyp = &dy.at(n, c, 0, 0);
        T* dxp = &dx->at(n, c, 0, 0);
        for (int64_t i = 0; i < plane; ++i) dxp[i] = g * is * dyp[i];
      }
    }
  }
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) dx.data[i] = x.data[i] > T(0) ? dy.data[i] : T(0);
  return dx;
}

}  // namespace splitfit
