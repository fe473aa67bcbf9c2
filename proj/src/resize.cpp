#include <algorithm>
#include <cmath>
#include <cstring>

#include "crfp/tensor.hpp"

namespace crfp {

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

Tensor alloc_out(std::vector<int> shape, Tape* tape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<float>>(static_cast<size_t>(t.numel()), 0.0f);
  if (tape) {
    t.tape = tape;
    t.node = tape->add_node(t.numel());
  }
  return t;
}

}  // namespace

// ---- pixel shuffle pair ------------------------------------------------------
// Channel convention: input channel c = c_out*r^2 + r*dy + dx feeds output
// position (r*y + dy, r*x + dx) of channel c_out.

Tensor pixel_shuffle_up(const Tensor& x, int r) {
  if (x.rank() != 4) throw ConfigError("pixel_shuffle_up: rank-4 tensor required");
  if (r < 1) throw ConfigError("pixel_shuffle_up: r must be >= 1");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C % (r * r) != 0) throw ConfigError("pixel_shuffle_up: channels not divisible by r^2");
  int OC = C / (r * r), OH = H * r, OW = W * r;
  Tape* tape = pick_tape({&x});
  Tensor out = alloc_out({B, OC, OH, OW}, tape);
  const float* xp = x.ptr();
  float* yp = out.ptr();
  for (int b = 0; b < B; ++b)
    for (int ci = 0; ci < C; ++ci) {
      int co = ci / (r * r);
      int rem = ci % (r * r);
      int dy = rem / r, dx = rem % r;
      const float* src = xp + (static_cast<long>(b) * C + ci) * H * W;
      float* dst = yp + (static_cast<long>(b) * OC + co) * OH * OW;
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          dst[static_cast<long>(y * r + dy) * OW + (xx * r + dx)] = src[static_cast<long>(y) * W + xx];
    }
  if (tape && x.tracked()) {
    int on = out.node, xn = x.node;
    tape->set_backward(on, [tape, on, xn, B, C, H, W, OC, OH, OW, r] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      float* gx = tape->grad(xn).data();
      for (int b = 0; b < B; ++b)
        for (int ci = 0; ci < C; ++ci) {
          int co = ci / (r * r);
          int rem = ci % (r * r);
          int dy = rem / r, dx = rem % r;
          const float* src = go->data() + (static_cast<long>(b) * OC + co) * OH * OW;
          float* dst = gx + (static_cast<long>(b) * C + ci) * H * W;
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
              dst[static_cast<long>(y) * W + xx] += src[static_cast<long>(y * r + dy) * OW + (xx * r + dx)];
        }
    });
  }
  return out;
}

Tensor pixel_unshuffle_down(const Tensor& x, int r) {
  if (x.rank() != 4) throw ConfigError("pixel_unshuffle_down: rank-4 tensor required");
  if (r < 1) throw ConfigError("pixel_unshuffle_down: r must be >= 1");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % r != 0 || W % r != 0)
    throw ConfigError("pixel_unshuffle_down: spatial dims not divisible by r");
  int OC = C * r * r, OH = H / r, OW = W / r;
  Tape* tape = pick_tape({&x});
  Tensor out = alloc_out({B, OC, OH, OW}, tape);
  const float* xp = x.ptr();
  float* yp = out.ptr();
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < OC; ++co) {
      int ci = co / (r * r);
      int rem = co % (r * r);
      int dy = rem / r, dx = rem % r;
      const float* src = xp + (static_cast<long>(b) * C + ci) * H * W;
      float* dst = yp + (static_cast<long>(b) * OC + co) * OH * OW;
      for (int y = 0; y < OH; ++y)
        for (int xx = 0; xx < OW; ++xx)
          dst[static_cast<long>(y) * OW + xx] = src[static_cast<long>(y * r + dy) * W + (xx * r + dx)];
    }
  if (tape && x.tracked()) {
    int on = out.node, xn = x.node;
    tape->set_backward(on, [tape, on, xn, B, C, H, W, OC, OH, OW, r] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      float* gx = tape->grad(xn).data();
      for (int b = 0; b < B; ++b)
        for (int co = 0; co < OC; ++co) {
          int ci = co / (r * r);
          int rem = co % (r * r);
          int dy = rem / r, dx = rem % r;
          const float* src = go->data() + (static_cast<long>(b) * OC + co) * OH * OW;
          float* dst = gx + (static_cast<long>(b) * C + ci) * H * W;
          for (int y = 0; y < OH; ++y)
            for (int xx = 0; xx < OW; ++xx)
              dst[static_cast<long>(y * r + dy) * W + (xx * r + dx)] += src[static_cast<long>(y) * OW + xx];
        }
    });
  }
  return out;
}

// ---- avg pool ----------------------------------------------------------------

Tensor avg_pool2(const Tensor& x) {
  if (x.rank() != 4) throw ConfigError("avg_pool2: rank-4 tensor required");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) throw ConfigError("avg_pool2: odd spatial dims");
  int OH = H / 2, OW = W / 2;
  Tape* tape = pick_tape({&x});
  Tensor out = alloc_out({B, C, OH, OW}, tape);
  const float* xp = x.ptr();
  float* yp = out.ptr();
  for (long p = 0; p < static_cast<long>(B) * C; ++p) {
    const float* src = xp + p * H * W;
    float* dst = yp + p * OH * OW;
    for (int y = 0; y < OH; ++y)
      for (int xx = 0; xx < OW; ++xx) {
        const float* r0 = src + static_cast<long>(2 * y) * W + 2 * xx;
        const float* r1 = r0 + W;
        dst[static_cast<long>(y) * OW + xx] = 0.25f * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
  if (tape && x.tracked()) {
    int on = out.node, xn = x.node;
    tape->set_backward(on, [tape, on, xn, B, C, H, W, OH, OW] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      float* gx = tape->grad(xn).data();
      for (long p = 0; p < static_cast<long>(B) * C; ++p) {
        const float* src = go->data() + p * OH * OW;
        float* dst = gx + p * H * W;
        for (int y = 0; y < OH; ++y)
          for (int xx = 0; xx < OW; ++xx) {
            float g = 0.25f * src[static_cast<long>(y) * OW + xx];
            float* r0 = dst + static_cast<long>(2 * y) * W + 2 * xx;
            float* r1 = r0 + W;
            r0[0] += g;
            r0[1] += g;
            r1[0] += g;
            r1[1] += g;
          }
      }
    });
  }
  return out;
}

// ---- bilinear resize ---------------------------------------------------------
// align-corners-false: src = (dst + 0.5) * (in/out) - 0.5, border-clamped taps.

namespace {
struct LinTap {
  int i0, i1;
  float w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<LinTap> linear_taps(int in_dim, int out_dim) {
  std::vector<LinTap> taps(static_cast<size_t>(out_dim));
  double ratio = static_cast<double>(in_dim) / out_dim;
  for (int o = 0; o < out_dim; ++o) {
    double s = (o + 0.5) * ratio - 0.5;
    double fl = std::floor(s);
    int i0 = static_cast<int>(fl);
    float w1 = static_cast<float>(s - fl);
    int i1 = i0 + 1;
    taps[static_cast<size_t>(o)] = {std::clamp(i0, 0, in_dim - 1), std::clamp(i1, 0, in_dim - 1), w1};
  }
  return taps;
}
}  // namespace

Tensor bilinear_resize_to(const Tensor& x, int oh, int ow) {
  if (x.rank() != 4) throw ConfigError("bilinear_resize: rank-4 tensor required");
  if (oh < 1 || ow < 1) throw ConfigError("bilinear_resize: empty output");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tape* tape = pick_tape({&x});
  Tensor out = alloc_out({B, C, oh, ow}, tape);
  auto ty = linear_taps(H, oh);
  auto tx = linear_taps(W, ow);
  const float* xp = x.ptr();
  float* yp = out.ptr();
  for (long p = 0; p < static_cast<long>(B) * C; ++p) {
    const float* src = xp + p * H * W;
    float* dst = yp + p * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const LinTap& a = ty[static_cast<size_t>(oy)];
      const float* r0 = src + static_cast<long>(a.i0) * W;
      const float* r1 = src + static_cast<long>(a.i1) * W;
      for (int ox = 0; ox < ow; ++ox) {
        const LinTap& bx = tx[static_cast<size_t>(ox)];
        float top = (1.0f - bx.w1) * r0[bx.i0] + bx.w1 * r0[bx.i1];
        float bot = (1.0f - bx.w1) * r1[bx.i0] + bx.w1 * r1[bx.i1];
        dst[static_cast<long>(oy) * ow + ox] = (1.0f - a.w1) * top + a.w1 * bot;
      }
    }
  }
  if (tape && x.tracked()) {
    int on = out.node, xn = x.node;
    long planes = static_cast<long>(B) * C;
    tape->set_backward(on, [tape, on, xn, planes, H, W, oh, ow, ty, tx] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      float* gx = tape->grad(xn).data();
      for (long p = 0; p < planes; ++p) {
        const float* src = go->data() + p * oh * ow;
        float* dst = gx + p * H * W;
        for (int oy = 0; oy < oh; ++oy) {
          const LinTap& a = ty[static_cast<size_t>(oy)];
          float* r0 = dst + static_cast<long>(a.i0) * W;
          float* r1 = dst + static_cast<long>(a.i1) * W;
          for (int ox = 0; ox < ow; ++ox) {
            const LinTap& bx = tx[static_cast<size_t>(ox)];
            float g = src[static_cast<long>(oy) * ow + ox];
            float gt = (1.0f - a.w1) * g;
            float gb = a.w1 * g;
            r0[bx.i0] += (1.0f - bx.w1) * gt;
            r0[bx.i1] += bx.w1 * gt;
            r1[bx.i0] += (1.0f - bx.w1) * gb;
            r1[bx.i1] += bx.w1 * gb;
          }
        }
      }
    });
  }
  return out;
}

Tensor bilinear_resize(const Tensor& x, double scale) {
  if (scale <= 0.0) throw ConfigError("bilinear_resize: scale must be positive");
  int oh = static_cast<int>(std::llround(x.dim(2) * scale));
  int ow = static_cast<int>(std::llround(x.dim(3) * scale));
  return bilinear_resize_to(x, std::max(oh, 1), std::max(ow, 1));
}

// ---- bicubic resize ----------------------------------------------------------
// Catmull-Rom (a = -0.5); when downscaling the kernel is stretched by 1/scale
// (antialiasing) and weights renormalized; taps are border-clamped.

namespace {

inline double cubic_kernel(double t) {
  const double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
  return 0.0;
}

struct CubicTaps {
  std::vector<int> start;            // first clamped source index per output
  std::vector<int> count;
  std::vector<std::vector<float>> w; // normalized weights
};

CubicTaps cubic_taps(int in_dim, int out_dim) {
  CubicTaps taps;
  taps.start.resize(static_cast<size_t>(out_dim));
  taps.count.resize(static_cast<size_t>(out_dim));
  taps.w.resize(static_cast<size_t>(out_dim));
  double scale = static_cast<double>(out_dim) / in_dim;
  double sbar = std::min(scale, 1.0);
  double radius = 2.0 / sbar;
  for (int o = 0; o < out_dim; ++o) {
    double s = (o + 0.5) / scale - 0.5;
    int lo = static_cast<int>(std::ceil(s - radius));
    int hi = static_cast<int>(std::floor(s + radius));
    std::vector<float> wt;
    double sum = 0.0;
    for (int i = lo; i <= hi; ++i) {
      double v = cubic_kernel((i - s) * sbar);
      wt.push_back(static_cast<float>(v));
      sum += v;
    }
    for (float& v : wt) v = static_cast<float>(v / sum);
    taps.start[static_cast<size_t>(o)] = lo;
    taps.count[static_cast<size_t>(o)] = hi - lo + 1;
    taps.w[static_cast<size_t>(o)] = std::move(wt);
  }
  return taps;
}

inline int clamp_idx(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace

Tensor bicubic_resize(const Tensor& x, double scale) {
  if (x.rank() != 4) throw ConfigError("bicubic_resize: rank-4 tensor required");
  if (scale <= 0.0) throw ConfigError("bicubic_resize: scale must be positive");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int OH = std::max(static_cast<int>(std::llround(H * scale)), 1);
  int OW = std::max(static_cast<int>(std::llround(W * scale)), 1);
  Tape* tape = pick_tape({&x});
  auto ty = cubic_taps(H, OH);
  auto tx = cubic_taps(W, OW);
  long planes = static_cast<long>(B) * C;

  // horizontal pass into a temp (H x OW), then vertical into the output
  Tensor out = alloc_out({B, C, OH, OW}, tape);
  std::vector<float> tmp(static_cast<size_t>(H) * OW);
  const float* xp = x.ptr();
  float* yp = out.ptr();
  for (long p = 0; p < planes; ++p) {
    const float* src = xp + p * H * W;
    for (int y = 0; y < H; ++y) {
      const float* row = src + static_cast<long>(y) * W;
      float* trow = tmp.data() + static_cast<long>(y) * OW;
      for (int ox = 0; ox < OW; ++ox) {
        const auto& wt = tx.w[static_cast<size_t>(ox)];
        int s0 = tx.start[static_cast<size_t>(ox)];
        float acc = 0.0f;
        for (int k = 0; k < tx.count[static_cast<size_t>(ox)]; ++k)
          acc += wt[static_cast<size_t>(k)] * row[clamp_idx(s0 + k, W)];
        trow[ox] = acc;
      }
    }
    float* dst = yp + p * OH * OW;
    for (int oy = 0; oy < OH; ++oy) {
      const auto& wt = ty.w[static_cast<size_t>(oy)];
      int s0 = ty.start[static_cast<size_t>(oy)];
      for (int ox = 0; ox < OW; ++ox) {
        float acc = 0.0f;
        for (int k = 0; k < ty.count[static_cast<size_t>(oy)]; ++k)
          acc += wt[static_cast<size_t>(k)] * tmp[static_cast<long>(clamp_idx(s0 + k, H)) * OW + ox];
        dst[static_cast<long>(oy) * OW + ox] = acc;
      }
    }
  }
  if (tape && x.tracked()) {
    int on = out.node, xn = x.node;
    tape->set_backward(on, [tape, on, xn, planes, H, W, OH, OW, ty, tx] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      float* gx = tape->grad(xn).data();
      std::vector<float> gtmp(static_cast<size_t>(H) * OW);
      for (long p = 0; p < planes; ++p) {
        std::fill(gtmp.begin(), gtmp.end(), 0.0f);
        const float* src = go->data() + p * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          const auto& wt = ty.w[static_cast<size_t>(oy)];
          int s0 = ty.start[static_cast<size_t>(oy)];
          for (int ox = 0; ox < OW; ++ox) {
            float g = src[static_cast<long>(oy) * OW + ox];
            for (int k = 0; k < ty.count[static_cast<size_t>(oy)]; ++k)
              gtmp[static_cast<long>(clamp_idx(s0 + k, H)) * OW + ox] += wt[static_cast<size_t>(k)] * g;
          }
        }
        float* dst = gx + p * H * W;
        for (int y = 0; y < H; ++y) {
          const float* trow = gtmp.data() + static_cast<long>(y) * OW;
          float* row = dst + static_cast<long>(y) * W;
          for (int ox = 0; ox < OW; ++ox) {
            const auto& wt = tx.w[static_cast<size_t>(ox)];
            int s0 = tx.start[static_cast<size_t>(ox)];
            float g = trow[ox];
            for (int k = 0; k < tx.count[static_cast<size_t>(ox)]; ++k)
              row[clamp_idx(s0 + k, W)] += wt[static_cast<size_t>(k)] * g;
          }
        }
      }
    });
  }
  return out;
}

// ---- warp --------------------------------------------------------------------
// output(p) = bilinear sample of x at p + flow(p); flow channels (dx, dy) in
// pixels at x's resolution; out-of-frame taps contribute zero. Zero flow at a
// pixel short-circuits to an exact copy, making the zero-flow warp bitwise
// identical to the input.

Tensor warp_bilinear(const Tensor& x, const Tensor& flow) {
  if (x.rank() != 4 || flow.rank() != 4) throw ConfigError("warp_bilinear: rank-4 tensors required");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (flow.dim(0) != B || flow.dim(1) != 2 || flow.dim(2) != H || flow.dim(3) != W)
    throw ConfigError("warp_bilinear: flow must be (B,2,H,W) matching x spatially");
  Tape* tape = pick_tape({&x, &flow});
  Tensor out = alloc_out({B, C, H, W}, tape);
  long plane = static_cast<long>(H) * W;
  const float* xp = x.ptr();
  const float* fp = flow.ptr();
  float* yp = out.ptr();
  for (int b = 0; b < B; ++b) {
    const float* u = fp + static_cast<long>(b) * 2 * plane;
    const float* v = u + plane;
    for (int oy = 0; oy < H; ++oy)
      for (int ox = 0; ox < W; ++ox) {
        long pi = static_cast<long>(oy) * W + ox;
        float du = u[pi], dv = v[pi];
        if (du == 0.0f && dv == 0.0f) {
          for (int c = 0; c < C; ++c)
            yp[(static_cast<long>(b) * C + c) * plane + pi] = xp[(static_cast<long>(b) * C + c) * plane + pi];
          continue;
        }
        float sx = ox + du, sy = oy + dv;
        float flx = std::floor(sx), fly = std::floor(sy);
        int x0 = static_cast<int>(flx), y0 = static_cast<int>(fly);
        float wx = sx - flx, wy = sy - fly;
        bool x0i = x0 >= 0 && x0 < W, x1i = x0 + 1 >= 0 && x0 + 1 < W;
        bool y0i = y0 >= 0 && y0 < H, y1i = y0 + 1 >= 0 && y0 + 1 < H;
        float w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
        float w10 = wy * (1 - wx), w11 = wy * wx;
        for (int c = 0; c < C; ++c) {
          const float* src = xp + (static_cast<long>(b) * C + c) * plane;
          float acc = 0.0f;
          if (y0i && x0i) acc += w00 * src[static_cast<long>(y0) * W + x0];
          if (y0i && x1i) acc += w01 * src[static_cast<long>(y0) * W + x0 + 1];
          if (y1i && x0i) acc += w10 * src[static_cast<long>(y0 + 1) * W + x0];
          if (y1i && x1i) acc += w11 * src[static_cast<long>(y0 + 1) * W + x0 + 1];
          yp[(static_cast<long>(b) * C + c) * plane + pi] = acc;
        }
      }
  }
  if (tape) {
    int on = out.node;
    int xn = x.tracked() ? x.node : -1;
    int fn = flow.tracked() ? flow.node : -1;
    auto xd = x.data;
    auto fd = flow.data;
    tape->set_backward(on, [tape, on, xn, fn, B, C, H, W, plane, xd, fd] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      const float* GO = go->data();
      const float* xp = xd->data();
      const float* fp = fd->data();
      float* gx = xn >= 0 ? tape->grad(xn).data() : nullptr;
      float* gf = fn >= 0 ? tape->grad(fn).data() : nullptr;
      for (int b = 0; b < B; ++b) {
        const float* u = fp + static_cast<long>(b) * 2 * plane;
        const float* v = u + plane;
        float* gu = gf ? gf + static_cast<long>(b) * 2 * plane : nullptr;
        float* gv = gu ? gu + plane : nullptr;
        for (int oy = 0; oy < H; ++oy)
          for (int ox = 0; ox < W; ++ox) {
            long pi = static_cast<long>(oy) * W + ox;
            float sx = ox + u[pi], sy = oy + v[pi];
            float flx = std::floor(sx), fly = std::floor(sy);
            int x0 = static_cast<int>(flx), y0 = static_cast<int>(fly);
            float wx = sx - flx, wy = sy - fly;
            bool x0i = x0 >= 0 && x0 < W, x1i = x0 + 1 >= 0 && x0 + 1 < W;
            bool y0i = y0 >= 0 && y0 < H, y1i = y0 + 1 >= 0 && y0 + 1 < H;
            float w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
            float w10 = wy * (1 - wx), w11 = wy * wx;
            float du_acc = 0.0f, dv_acc = 0.0f;
            for (int c = 0; c < C; ++c) {
              long ci = (static_cast<long>(b) * C + c) * plane;
              float g = GO[ci + pi];
              if (g == 0.0f) continue;
              float v00 = (y0i && x0i) ? xp[ci + static_cast<long>(y0) * W + x0] : 0.0f;
              float v01 = (y0i && x1i) ? xp[ci + static_cast<long>(y0) * W + x0 + 1] : 0.0f;
              float v10 = (y1i && x0i) ? xp[ci + static_cast<long>(y0 + 1) * W + x0] : 0.0f;
              float v11 = (y1i && x1i) ? xp[ci + static_cast<long>(y0 + 1) * W + x0 + 1] : 0.0f;
              if (gx) {
                if (y0i && x0i) gx[ci + static_cast<long>(y0) * W + x0] += w00 * g;
                if (y0i && x1i) gx[ci + static_cast<long>(y0) * W + x0 + 1] += w01 * g;
                if (y1i && x0i) gx[ci + static_cast<long>(y0 + 1) * W + x0] += w10 * g;
                if (y1i && x1i) gx[ci + static_cast<long>(y0 + 1) * W + x0 + 1] += w11 * g;
              }
              if (gu) {
                du_acc += g * ((1 - wy) * (v01 - v00) + wy * (v11 - v10));
                dv_acc += g * ((1 - wx) * (v10 - v00) + wx * (v11 - v01));
              }
            }
            if (gu) {
              gu[pi] += du_acc;
              gv[pi] += dv_acc;
            }
          }
      }
    });
  }
  return out;
}

}  // namespace crfp
