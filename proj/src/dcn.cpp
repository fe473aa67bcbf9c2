#include <algorithm>
#include <cmath>
#include <cstring>

#include "crfp/tensor.hpp"

namespace crfp {

// Modulated deformable 3x3 conv with a single offset vector and a single
// mask shared by all taps and channels at each output position:
//   out[oc,p] = bias[oc] + M(p) * sum_{ic,k} w[oc,ic,k] * x(ic, p + grid_k + O(p))
// Samples are bilinear; taps falling outside the frame contribute zero, so
// with O = 0 and M = 1 this reduces to conv2d(x, w, b, stride 1, pad 1).
// The region variant evaluates only output positions [y0, y0+RH) x [x0, x0+RW)
// (offsets/masks are region-sized) while sampling from the full input.

namespace {

Tape* pick_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts)
    if (t->tracked()) {
      if (tape && tape != t->tape) throw ConfigError("mixed tapes in one operation");
      tape = t->tape;
    }
  return tape;
}

struct DcnDims {
  int B, C, H, W, OC, RH, RW, y0, x0;
};

DcnDims check_dcn(const Tensor& x, const Tensor& offsets, const Tensor& masks, const Tensor& w,
                  const Tensor& b, int y0, int x0) {
  if (x.rank() != 4 || offsets.rank() != 4 || masks.rank() != 4)
    throw ConfigError("dcn_lite: rank-4 activations required");
  if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3)
    throw ConfigError("dcn_lite: weight must be (OC,C,3,3)");
  DcnDims d{};
  d.B = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.OC = w.dim(0);
  d.RH = offsets.dim(2);
  d.RW = offsets.dim(3);
  d.y0 = y0;
  d.x0 = x0;
  if (w.dim(1) != d.C) throw ConfigError("dcn_lite: input channels do not match weight in_ch");
  if (b.rank() != 1 || b.dim(0) != d.OC) throw ConfigError("dcn_lite: bias must be (OC)");
  if (offsets.dim(0) != d.B || offsets.dim(1) != 2)
    throw ConfigError("dcn_lite: offsets must be (B,2,RH,RW)");
  if (masks.dim(0) != d.B || masks.dim(1) != 1 || masks.dim(2) != d.RH || masks.dim(3) != d.RW)
    throw ConfigError("dcn_lite: masks must be (B,1,RH,RW)");
  if (y0 < 0 || x0 < 0 || y0 + d.RH > d.H || x0 + d.RW > d.W)
    throw ConfigError("dcn_lite: region exceeds input frame");
  return d;
}

// Bilinear taps of one sample coordinate: indices clamped validity flags plus
// the four corner weights.
struct Sample {
  int iy0, ix0;
  float wy, wx;
};

inline float sample_val(const float* plane, int H, int W, const Sample& s, int ky, int kx) {
  int y0 = s.iy0 + ky, x0v = s.ix0 + kx;
  int y1 = y0 + 1, x1 = x0v + 1;
  bool y0i = y0 >= 0 && y0 < H, y1i = y1 >= 0 && y1 < H;
  bool x0i = x0v >= 0 && x0v < W, x1i = x1 >= 0 && x1 < W;
  float acc = 0.0f;
  if (y0i && x0i) acc += (1 - s.wy) * (1 - s.wx) * plane[static_cast<long>(y0) * W + x0v];
  if (y0i && x1i) acc += (1 - s.wy) * s.wx * plane[static_cast<long>(y0) * W + x1];
  if (y1i && x0i) acc += s.wy * (1 - s.wx) * plane[static_cast<long>(y1) * W + x0v];
  if (y1i && x1i) acc += s.wy * s.wx * plane[static_cast<long>(y1) * W + x1];
  return acc;
}

Tensor dcn_impl(const Tensor& x, const Tensor& offsets, const Tensor& masks, const Tensor& w,
                const Tensor& b, int y0, int x0) {
  DcnDims d = check_dcn(x, offsets, masks, w, b, y0, x0);
  Tape* tape = pick_tape({&x, &offsets, &masks, &w, &b});
  Tensor out;
  out.shape = {d.B, d.OC, d.RH, d.RW};
  out.data = std::make_shared<std::vector<float>>(static_cast<size_t>(out.numel()), 0.0f);
  if (tape) {
    out.tape = tape;
    out.node = tape->add_node(out.numel());
  }

  long plane = static_cast<long>(d.H) * d.W;
  long rplane = static_cast<long>(d.RH) * d.RW;
  const float* xp = x.ptr();
  const float* op = offsets.ptr();
  const float* mp = masks.ptr();
  const float* wp = w.ptr();
  const float* bp = b.ptr();
  float* yp = out.ptr();
  int taps = d.C * 9;
  std::vector<float> s(static_cast<size_t>(taps));

  for (int bb = 0; bb < d.B; ++bb) {
    const float* odx = op + static_cast<long>(bb) * 2 * rplane;
    const float* ody = odx + rplane;
    const float* mm = mp + static_cast<long>(bb) * rplane;
    for (int ry = 0; ry < d.RH; ++ry)
      for (int rx = 0; rx < d.RW; ++rx) {
        long pi = static_cast<long>(ry) * d.RW + rx;
        float sx = x0 + rx - 1 + odx[pi];
        float sy = y0 + ry - 1 + ody[pi];
        float flx = std::floor(sx), fly = std::floor(sy);
        Sample sm{static_cast<int>(fly), static_cast<int>(flx), sy - fly, sx - flx};
        for (int ic = 0; ic < d.C; ++ic) {
          const float* pl = xp + (static_cast<long>(bb) * d.C + ic) * plane;
          for (int k = 0; k < 9; ++k)
            s[static_cast<size_t>(ic * 9 + k)] = sample_val(pl, d.H, d.W, sm, k / 3, k % 3);
        }
        float m = mm[pi];
        for (int oc = 0; oc < d.OC; ++oc) {
          const float* wr = wp + static_cast<long>(oc) * taps;
          float acc = 0.0f;
          for (int i = 0; i < taps; ++i) acc += wr[i] * s[static_cast<size_t>(i)];
          yp[(static_cast<long>(bb) * d.OC + oc) * rplane + pi] = bp[oc] + m * acc;
        }
      }
  }

  if (tape) {
    int on = out.node;
    int xn = x.tracked() ? x.node : -1;
    int onn = offsets.tracked() ? offsets.node : -1;
    int mn = masks.tracked() ? masks.node : -1;
    int wn = w.tracked() ? w.node : -1;
    int bn = b.tracked() ? b.node : -1;
    auto xd = x.data;
    auto od = offsets.data;
    auto md = masks.data;
    auto wd = w.data;
    tape->set_backward(on, [tape, on, xn, onn, mn, wn, bn, d, plane, rplane, taps, xd, od, md, wd] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      const float* GO = go->data();
      const float* xp = xd->data();
      const float* op = od->data();
      const float* mp = md->data();
      const float* wp = wd->data();
      float* gx = xn >= 0 ? tape->grad(xn).data() : nullptr;
      float* gof = onn >= 0 ? tape->grad(onn).data() : nullptr;
      float* gm = mn >= 0 ? tape->grad(mn).data() : nullptr;
      float* gw = wn >= 0 ? tape->grad(wn).data() : nullptr;
      float* gb = bn >= 0 ? tape->grad(bn).data() : nullptr;
      std::vector<float> s(static_cast<size_t>(taps));
      std::vector<float> gs(static_cast<size_t>(taps));
      for (int bb = 0; bb < d.B; ++bb) {
        const float* odx = op + static_cast<long>(bb) * 2 * rplane;
        const float* ody = odx + rplane;
        const float* mm = mp + static_cast<long>(bb) * rplane;
        float* godx = gof ? gof + static_cast<long>(bb) * 2 * rplane : nullptr;
        float* gody = godx ? godx + rplane : nullptr;
        for (int ry = 0; ry < d.RH; ++ry)
          for (int rx = 0; rx < d.RW; ++rx) {
            long pi = static_cast<long>(ry) * d.RW + rx;
            float sx = d.x0 + rx - 1 + odx[pi];
            float sy = d.y0 + ry - 1 + ody[pi];
            float flx = std::floor(sx), fly = std::floor(sy);
            Sample sm{static_cast<int>(fly), static_cast<int>(flx), sy - fly, sx - flx};
            for (int ic = 0; ic < d.C; ++ic) {
              const float* pl = xp + (static_cast<long>(bb) * d.C + ic) * plane;
              for (int k = 0; k < 9; ++k)
                s[static_cast<size_t>(ic * 9 + k)] = sample_val(pl, d.H, d.W, sm, k / 3, k % 3);
            }
            float m = mm[pi];
            std::fill(gs.begin(), gs.end(), 0.0f);
            float gm_acc = 0.0f;
            for (int oc = 0; oc < d.OC; ++oc) {
              float g = GO[(static_cast<long>(bb) * d.OC + oc) * rplane + pi];
              if (g == 0.0f) continue;
              const float* wr = wp + static_cast<long>(oc) * taps;
              if (gm || gw) {
                float dot = 0.0f;
                for (int i = 0; i < taps; ++i) dot += wr[i] * s[static_cast<size_t>(i)];
                gm_acc += g * dot;
              }
              if (gb) gb[oc] += g;
              float gmg = m * g;
              if (gw) {
                float* gwr = gw + static_cast<long>(oc) * taps;
                for (int i = 0; i < taps; ++i) gwr[i] += gmg * s[static_cast<size_t>(i)];
              }
              if (gx || gof)
                for (int i = 0; i < taps; ++i) gs[static_cast<size_t>(i)] += gmg * wr[i];
            }
            if (gm) gm[static_cast<long>(bb) * rplane + pi] += gm_acc;
            if (!gx && !gof) continue;
            float du_acc = 0.0f, dv_acc = 0.0f;
            for (int ic = 0; ic < d.C; ++ic) {
              const float* pl = xp + (static_cast<long>(bb) * d.C + ic) * plane;
              float* gpl = gx ? gx + (static_cast<long>(bb) * d.C + ic) * plane : nullptr;
              for (int k = 0; k < 9; ++k) {
                float g = gs[static_cast<size_t>(ic * 9 + k)];
                if (g == 0.0f) continue;
                int ty = sm.iy0 + k / 3, tx = sm.ix0 + k % 3;
                int ty1 = ty + 1, tx1 = tx + 1;
                bool y0i = ty >= 0 && ty < d.H, y1i = ty1 >= 0 && ty1 < d.H;
                bool x0i = tx >= 0 && tx < d.W, x1i = tx1 >= 0 && tx1 < d.W;
                float v00 = (y0i && x0i) ? pl[static_cast<long>(ty) * d.W + tx] : 0.0f;
                float v01 = (y0i && x1i) ? pl[static_cast<long>(ty) * d.W + tx1] : 0.0f;
                float v10 = (y1i && x0i) ? pl[static_cast<long>(ty1) * d.W + tx] : 0.0f;
                float v11 = (y1i && x1i) ? pl[static_cast<long>(ty1) * d.W + tx1] : 0.0f;
                if (gpl) {
                  if (y0i && x0i) gpl[static_cast<long>(ty) * d.W + tx] += (1 - sm.wy) * (1 - sm.wx) * g;
                  if (y0i && x1i) gpl[static_cast<long>(ty) * d.W + tx1] += (1 - sm.wy) * sm.wx * g;
                  if (y1i && x0i) gpl[static_cast<long>(ty1) * d.W + tx] += sm.wy * (1 - sm.wx) * g;
                  if (y1i && x1i) gpl[static_cast<long>(ty1) * d.W + tx1] += sm.wy * sm.wx * g;
                }
                if (gof) {
                  du_acc += g * ((1 - sm.wy) * (v01 - v00) + sm.wy * (v11 - v10));
                  dv_acc += g * ((1 - sm.wx) * (v10 - v00) + sm.wx * (v11 - v01));
                }
              }
            }
            if (godx) {
              godx[pi] += du_acc;
              gody[pi] += dv_acc;
            }
          }
      }
    });
  }
  return out;
}

}  // namespace

Tensor dcn_lite(const Tensor& x, const Tensor& offsets, const Tensor& masks, const Tensor& w,
                const Tensor& b) {
  if (offsets.rank() == 4 && (offsets.dim(2) != x.dim(2) || offsets.dim(3) != x.dim(3)))
    throw ConfigError("dcn_lite: offsets must match input spatially");
  return dcn_impl(x, offsets, masks, w, b, 0, 0);
}

Tensor dcn_lite_region(const Tensor& x, const Tensor& offsets, const Tensor& masks, const Tensor& w,
                       const Tensor& b, int y0, int x0) {
  return dcn_impl(x, offsets, masks, w, b, y0, x0);
}

}  // namespace crfp
