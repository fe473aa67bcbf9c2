#include <algorithm>
#include <cstring>

#include "crfp/tensor.hpp"

// conv2d: cross-correlation, NCHW. The stride-1 path is written so the
// innermost loops are contiguous AXPY / dot patterns the compiler can
// vectorize without reassociating any single output's sum: forward and
// grad-input accumulate over (ic, ky, kx) sequentially per output element
// (row-major), grad-weight reduces each plane dot product through fixed
// 8-lane partials combined in a fixed order.

namespace crfp {

namespace {

struct ConvDims {
  int B, IC, H, W, OC, KH, KW, OH, OW, stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4) throw ConfigError("conv2d: rank-4 input and weight required");
  if (b.rank() != 1) throw ConfigError("conv2d: rank-1 bias required");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (pad < 0) throw ConfigError("conv2d: padding must be >= 0");
  ConvDims d;
  d.B = x.dim(0);
  d.IC = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.OC = w.dim(0);
  d.KH = w.dim(2);
  d.KW = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (w.dim(1) != d.IC)
    throw ConfigError("conv2d: input channels do not match weight in_ch");
  if (b.dim(0) != d.OC) throw ConfigError("conv2d: bias size does not match out_ch");
  d.OH = (d.H + 2 * pad - d.KH) / stride + 1;
  d.OW = (d.W + 2 * pad - d.KW) / stride + 1;
  if (d.OH <= 0 || d.OW <= 0) throw ConfigError("conv2d: empty output");
  return d;
}

// Valid output range along one axis for a given kernel offset (stride 1):
// iy = oy - pad + k must fall in [0, dim).
inline void tap_range(int dim, int out_dim, int pad, int k, int& o0, int& o1) {
  o0 = std::max(0, pad - k);
  o1 = std::min(out_dim, dim + pad - k);
}

void forward_s1(const ConvDims& d, const float* X, const float* Wt, const float* Bs, float* Y) {
  long xplane = static_cast<long>(d.H) * d.W;
  long yplane = static_cast<long>(d.OH) * d.OW;
  for (int b = 0; b < d.B; ++b)
    for (int oc = 0; oc < d.OC; ++oc) {
      float* yp = Y + (static_cast<long>(b) * d.OC + oc) * yplane;
      std::fill(yp, yp + yplane, Bs[oc]);
      for (int ic = 0; ic < d.IC; ++ic) {
        const float* xp = X + (static_cast<long>(b) * d.IC + ic) * xplane;
        const float* wr = Wt + (static_cast<long>(oc) * d.IC + ic) * d.KH * d.KW;
        for (int ky = 0; ky < d.KH; ++ky) {
          int oy0, oy1;
          tap_range(d.H, d.OH, d.pad, ky, oy0, oy1);
          for (int kx = 0; kx < d.KW; ++kx) {
            float wv = wr[ky * d.KW + kx];
            int ox0, ox1;
            tap_range(d.W, d.OW, d.pad, kx, ox0, ox1);
            long n = ox1 - ox0;
            if (n <= 0) continue;
            for (int oy = oy0; oy < oy1; ++oy) {
              float* yrow = yp + static_cast<long>(oy) * d.OW + ox0;
              const float* xrow = xp + static_cast<long>(oy - d.pad + ky) * d.W + (ox0 - d.pad + kx);
              for (long i = 0; i < n; ++i) yrow[i] += wv * xrow[i];
            }
          }
        }
      }
    }
}

// Generic (any stride) reference path; also the shape for strided use.
void forward_generic(const ConvDims& d, const float* X, const float* Wt, const float* Bs, float* Y) {
  long xplane = static_cast<long>(d.H) * d.W;
  long yplane = static_cast<long>(d.OH) * d.OW;
  for (int b = 0; b < d.B; ++b)
    for (int oc = 0; oc < d.OC; ++oc)
      for (int oy = 0; oy < d.OH; ++oy)
        for (int ox = 0; ox < d.OW; ++ox) {
          float acc = Bs[oc];
          for (int ic = 0; ic < d.IC; ++ic)
            for (int ky = 0; ky < d.KH; ++ky)
              for (int kx = 0; kx < d.KW; ++kx) {
                int iy = oy * d.stride - d.pad + ky;
                int ix = ox * d.stride - d.pad + kx;
                if (iy < 0 || iy >= d.H || ix < 0 || ix >= d.W) continue;
                acc += Wt[((static_cast<long>(oc) * d.IC + ic) * d.KH + ky) * d.KW + kx] *
                       X[(static_cast<long>(b) * d.IC + ic) * xplane + static_cast<long>(iy) * d.W + ix];
              }
          Y[(static_cast<long>(b) * d.OC + oc) * yplane + static_cast<long>(oy) * d.OW + ox] = acc;
        }
}

inline float lane_dot(const float* a, const float* b, long n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  long i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  for (; i < n; ++i) acc[0] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  ConvDims d = conv_dims(x, w, b, stride, padding);
  Tape* tape = nullptr;
  for (const Tensor* t : {&x, &w, &b})
    if (t->tracked()) {
      if (tape && tape != t->tape) throw ConfigError("conv2d: mixed tapes");
      tape = t->tape;
    }
  Tensor out;
  out.shape = {d.B, d.OC, d.OH, d.OW};
  out.data = std::make_shared<std::vector<float>>(static_cast<size_t>(out.numel()), 0.0f);
  if (tape) {
    out.tape = tape;
    out.node = tape->add_node(out.numel());
  }
  if (d.stride == 1)
    forward_s1(d, x.ptr(), w.ptr(), b.ptr(), out.ptr());
  else
    forward_generic(d, x.ptr(), w.ptr(), b.ptr(), out.ptr());

  if (tape) {
    int on = out.node;
    int xn = x.tracked() ? x.node : -1;
    int wn = w.tracked() ? w.node : -1;
    int bn = b.tracked() ? b.node : -1;
    auto xd = x.data;
    auto wd = w.data;
    tape->set_backward(on, [tape, on, xn, wn, bn, d, xd, wd] {
      const std::vector<float>* gov = tape->grad_if(on);
      if (!gov) return;
      const float* GO = gov->data();
      long xplane = static_cast<long>(d.H) * d.W;
      long yplane = static_cast<long>(d.OH) * d.OW;
      if (d.stride != 1) {
        // strided fallback, element-by-element
        float* GX = xn >= 0 ? tape->grad(xn).data() : nullptr;
        float* GW = wn >= 0 ? tape->grad(wn).data() : nullptr;
        float* GB = bn >= 0 ? tape->grad(bn).data() : nullptr;
        for (int b2 = 0; b2 < d.B; ++b2)
          for (int oc = 0; oc < d.OC; ++oc)
            for (int oy = 0; oy < d.OH; ++oy)
              for (int ox = 0; ox < d.OW; ++ox) {
                float g = GO[(static_cast<long>(b2) * d.OC + oc) * yplane + static_cast<long>(oy) * d.OW + ox];
                if (GB) GB[oc] += g;
                for (int ic = 0; ic < d.IC; ++ic)
                  for (int ky = 0; ky < d.KH; ++ky)
                    for (int kx = 0; kx < d.KW; ++kx) {
                      int iy = oy * d.stride - d.pad + ky;
                      int ix = ox * d.stride - d.pad + kx;
                      if (iy < 0 || iy >= d.H || ix < 0 || ix >= d.W) continue;
                      long xi = (static_cast<long>(b2) * d.IC + ic) * xplane + static_cast<long>(iy) * d.W + ix;
                      long wi = ((static_cast<long>(oc) * d.IC + ic) * d.KH + ky) * d.KW + kx;
                      if (GX) GX[xi] += (*wd)[static_cast<size_t>(wi)] * g;
                      if (GW) GW[wi] += (*xd)[static_cast<size_t>(xi)] * g;
                    }
              }
        return;
      }
      if (bn >= 0) {
        float* GB = tape->grad(bn).data();
        for (int b2 = 0; b2 < d.B; ++b2)
          for (int oc = 0; oc < d.OC; ++oc) {
            const float* gp = GO + (static_cast<long>(b2) * d.OC + oc) * yplane;
            float acc = 0.0f;
            for (long i = 0; i < yplane; ++i) acc += gp[i];
            GB[oc] += acc;
          }
      }
      if (xn >= 0) {
        float* GX = tape->grad(xn).data();
        const float* Wt = wd->data();
        for (int b2 = 0; b2 < d.B; ++b2)
          for (int oc = 0; oc < d.OC; ++oc) {
            const float* gp = GO + (static_cast<long>(b2) * d.OC + oc) * yplane;
            for (int ic = 0; ic < d.IC; ++ic) {
              float* gxp = GX + (static_cast<long>(b2) * d.IC + ic) * xplane;
              const float* wr = Wt + (static_cast<long>(oc) * d.IC + ic) * d.KH * d.KW;
              for (int ky = 0; ky < d.KH; ++ky) {
                int oy0, oy1;
                tap_range(d.H, d.OH, d.pad, ky, oy0, oy1);
                for (int kx = 0; kx < d.KW; ++kx) {
                  float wv = wr[ky * d.KW + kx];
                  int ox0, ox1;
                  tap_range(d.W, d.OW, d.pad, kx, ox0, ox1);
                  long n = ox1 - ox0;
                  if (n <= 0) continue;
                  for (int oy = oy0; oy < oy1; ++oy) {
                    const float* grow = gp + static_cast<long>(oy) * d.OW + ox0;
                    float* xrow = gxp + static_cast<long>(oy - d.pad + ky) * d.W + (ox0 - d.pad + kx);
                    for (long i = 0; i < n; ++i) xrow[i] += wv * grow[i];
                  }
                }
              }
            }
          }
      }
      if (wn >= 0) {
        float* GW = tape->grad(wn).data();
        const float* X = xd->data();
        for (int b2 = 0; b2 < d.B; ++b2)
          for (int oc = 0; oc < d.OC; ++oc) {
            const float* gp = GO + (static_cast<long>(b2) * d.OC + oc) * yplane;
            for (int ic = 0; ic < d.IC; ++ic) {
              const float* xp = X + (static_cast<long>(b2) * d.IC + ic) * xplane;
              float* wr = GW + (static_cast<long>(oc) * d.IC + ic) * d.KH * d.KW;
              for (int ky = 0; ky < d.KH; ++ky) {
                int oy0, oy1;
                tap_range(d.H, d.OH, d.pad, ky, oy0, oy1);
                for (int kx = 0; kx < d.KW; ++kx) {
                  int ox0, ox1;
                  tap_range(d.W, d.OW, d.pad, kx, ox0, ox1);
                  long n = ox1 - ox0;
                  if (n <= 0) continue;
                  float acc = 0.0f;
                  for (int oy = oy0; oy < oy1; ++oy)
                    acc += lane_dot(gp + static_cast<long>(oy) * d.OW + ox0,
                                    xp + static_cast<long>(oy - d.pad + ky) * d.W + (ox0 - d.pad + kx), n);
                  wr[ky * d.KW + kx] += acc;
                }
              }
            }
          }
      }
    });
  }
  return out;
}

}  // namespace crfp
