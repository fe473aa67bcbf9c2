#include "crfp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace crfp {

namespace {

long shape_numel(const std::vector<int>& shape) {
  long n = 1;
  for (int d : shape) {
    if (d < 0) throw ConfigError("negative tensor extent");
    n *= d;
  }
  return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) throw ConfigError(std::string(op) + ": shape mismatch");
}

// All tracked operands of one op must live on the same tape.
Tape* joint_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->tracked()) continue;
    if (tape == nullptr) tape = t->tape;
    else if (tape != t->tape) throw ConfigError("operands recorded on different tapes");
  }
  return tape;
}

Tensor make_out(std::vector<int> shape, Tape* tape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<float>>(static_cast<size_t>(shape_numel(t.shape)), 0.0f);
  if (tape) {
    t.tape = tape;
    t.node = tape->add_node(t.numel());
  }
  return t;
}

void axpy(float a, const float* x, float* y, long n) {
  for (long i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

// ---- factories ---------------------------------------------------------------

Tensor zeros(std::vector<int> shape) { return make_out(std::move(shape), nullptr); }

Tensor full(std::vector<int> shape, float value) {
  Tensor t = make_out(std::move(shape), nullptr);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor from_vec(std::vector<int> shape, std::vector<float> values) {
  if (shape_numel(shape) != static_cast<long>(values.size()))
    throw ConfigError("from_vec: element count does not match shape");
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<float>>(std::move(values));
  return t;
}

Tensor uniform_tensor(std::vector<int> shape, float lo, float hi, Rng& rng) {
  Tensor t = make_out(std::move(shape), nullptr);
  for (float& v : *t.data) v = rng.uniform_range(lo, hi);
  return t;
}

// ---- tape --------------------------------------------------------------------

int Tape::add_node(long numel) {
  nodes_.push_back(Node{numel, nullptr, nullptr});
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::set_backward(int node, std::function<void()> fn) {
  nodes_[static_cast<size_t>(node)].back = std::move(fn);
}

std::vector<float>& Tape::grad(int node) {
  Node& n = nodes_[static_cast<size_t>(node)];
  if (!n.grad) n.grad = std::make_unique<std::vector<float>>(static_cast<size_t>(n.numel), 0.0f);
  return *n.grad;
}

const std::vector<float>* Tape::grad_if(int node) const {
  if (node < 0 || node >= static_cast<int>(nodes_.size())) return nullptr;
  return nodes_[static_cast<size_t>(node)].grad.get();
}

Tensor Tape::leaf(Tensor t) {
  if (!t.defined()) throw ConfigError("leaf: undefined tensor");
  t.tape = this;
  t.node = add_node(t.numel());
  return t;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape != this || loss.node < 0) throw UsageError("backward: loss not recorded on this tape");
  if (loss.numel() != 1) throw UsageError("backward: loss must be scalar");
  replay_count_ = 0;
  grad(loss.node)[0] = 1.0f;
  for (int i = loss.node; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.back && n.grad) {
      n.back();
      ++replay_count_;
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  replay_count_ = 0;
}

const std::vector<float>* grad_of(const Tensor& t) {
  if (!t.tracked()) return nullptr;
  return t.tape->grad_if(t.node);
}

// ---- elementwise -------------------------------------------------------------

namespace {

// Shared scaffolding for y = unary(x) with dy/dx computed from captured data.
template <typename Fwd, typename MakeBack>
Tensor unary_op(const Tensor& x, Fwd fwd, MakeBack make_back) {
  Tape* tape = joint_tape({&x});
  Tensor out = make_out(x.shape, tape);
  const float* xp = x.ptr();
  float* yp = out.ptr();
  long n = x.numel();
  for (long i = 0; i < n; ++i) yp[i] = fwd(xp[i]);
  if (tape && x.tracked()) tape->set_backward(out.node, make_back(out, x));
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tape* tape = joint_tape({&a, &b});
  Tensor out = make_out(a.shape, tape);
  const float* ap = a.ptr();
  const float* bp = b.ptr();
  float* yp = out.ptr();
  long n = out.numel();
  for (long i = 0; i < n; ++i) yp[i] = ap[i] + bp[i];
  if (tape) {
    int an = a.tracked() ? a.node : -1;
    int bn = b.tracked() ? b.node : -1;
    int on = out.node;
    tape->set_backward(on, [tape, an, bn, on, n] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      if (an >= 0) axpy(1.0f, go->data(), tape->grad(an).data(), n);
      if (bn >= 0) axpy(1.0f, go->data(), tape->grad(bn).data(), n);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tape* tape = joint_tape({&a, &b});
  Tensor out = make_out(a.shape, tape);
  const float* ap = a.ptr();
  const float* bp = b.ptr();
  float* yp = out.ptr();
  long n = out.numel();
  for (long i = 0; i < n; ++i) yp[i] = ap[i] - bp[i];
  if (tape) {
    int an = a.tracked() ? a.node : -1;
    int bn = b.tracked() ? b.node : -1;
    int on = out.node;
    tape->set_backward(on, [tape, an, bn, on, n] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      if (an >= 0) axpy(1.0f, go->data(), tape->grad(an).data(), n);
      if (bn >= 0) axpy(-1.0f, go->data(), tape->grad(bn).data(), n);
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tape* tape = joint_tape({&a, &b});
  Tensor out = make_out(a.shape, tape);
  const float* ap = a.ptr();
  const float* bp = b.ptr();
  float* yp = out.ptr();
  long n = out.numel();
  for (long i = 0; i < n; ++i) yp[i] = ap[i] * bp[i];
  if (tape) {
    int an = a.tracked() ? a.node : -1;
    int bn = b.tracked() ? b.node : -1;
    int on = out.node;
    auto ad = a.data;
    auto bd = b.data;
    tape->set_backward(on, [tape, an, bn, on, n, ad, bd] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      if (an >= 0) {
        float* ga = tape->grad(an).data();
        for (long i = 0; i < n; ++i) ga[i] += (*go)[static_cast<size_t>(i)] * (*bd)[static_cast<size_t>(i)];
      }
      if (bn >= 0) {
        float* gb = tape->grad(bn).data();
        for (long i = 0; i < n; ++i) gb[i] += (*go)[static_cast<size_t>(i)] * (*ad)[static_cast<size_t>(i)];
      }
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, float s) {
  return unary_op(
      a, [s](float v) { return v + s; },
      [](const Tensor& out, const Tensor& x) {
        Tape* tape = out.tape;
        int on = out.node, xn = x.node;
        long n = out.numel();
        return [tape, on, xn, n] {
          const std::vector<float>* go = tape->grad_if(on);
          if (!go) return;
          axpy(1.0f, go->data(), tape->grad(xn).data(), n);
        };
      });
}

Tensor mul_scalar(const Tensor& a, float s) {
  return unary_op(
      a, [s](float v) { return v * s; },
      [s](const Tensor& out, const Tensor& x) {
        Tape* tape = out.tape;
        int on = out.node, xn = x.node;
        long n = out.numel();
        return [tape, on, xn, n, s] {
          const std::vector<float>* go = tape->grad_if(on);
          if (!go) return;
          axpy(s, go->data(), tape->grad(xn).data(), n);
        };
      });
}

Tensor leaky_relu(const Tensor& x, float slope) {
  return unary_op(
      x, [slope](float v) { return v > 0.0f ? v : slope * v; },
      [slope](const Tensor& out, const Tensor& xin) {
        Tape* tape = out.tape;
        int on = out.node, xn = xin.node;
        long n = out.numel();
        auto xd = xin.data;
        return [tape, on, xn, n, slope, xd] {
          const std::vector<float>* go = tape->grad_if(on);
          if (!go) return;
          float* gx = tape->grad(xn).data();
          const float* xp = xd->data();
          for (long i = 0; i < n; ++i)
            gx[i] += (*go)[static_cast<size_t>(i)] * (xp[i] > 0.0f ? 1.0f : slope);
        };
      });
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0f); }

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
      [](const Tensor& out, const Tensor& xin) {
        Tape* tape = out.tape;
        int on = out.node, xn = xin.node;
        long n = out.numel();
        auto yd = out.data;
        return [tape, on, xn, n, yd] {
          const std::vector<float>* go = tape->grad_if(on);
          if (!go) return;
          float* gx = tape->grad(xn).data();
          const float* yp = yd->data();
          for (long i = 0; i < n; ++i)
            gx[i] += (*go)[static_cast<size_t>(i)] * yp[i] * (1.0f - yp[i]);
        };
      });
}

Tensor tanh_act(const Tensor& x) {
  return unary_op(
      x, [](float v) { return std::tanh(v); },
      [](const Tensor& out, const Tensor& xin) {
        Tape* tape = out.tape;
        int on = out.node, xn = xin.node;
        long n = out.numel();
        auto yd = out.data;
        return [tape, on, xn, n, yd] {
          const std::vector<float>* go = tape->grad_if(on);
          if (!go) return;
          float* gx = tape->grad(xn).data();
          const float* yp = yd->data();
          for (long i = 0; i < n; ++i)
            gx[i] += (*go)[static_cast<size_t>(i)] * (1.0f - yp[i] * yp[i]);
        };
      });
}

Tensor sum_all(const Tensor& x) {
  Tape* tape = joint_tape({&x});
  Tensor out = make_out({1}, tape);
  const float* xp = x.ptr();
  long n = x.numel();
  float acc = 0.0f;
  for (long i = 0; i < n; ++i) acc += xp[i];
  out.ptr()[0] = acc;
  if (tape && x.tracked()) {
    int on = out.node, xn = x.node;
    tape->set_backward(on, [tape, on, xn, n] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      float g = (*go)[0];
      float* gx = tape->grad(xn).data();
      for (long i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  long n = x.numel();
  if (n == 0) throw ConfigError("mean_all: empty tensor");
  return mul_scalar(sum_all(x), 1.0f / static_cast<float>(n));
}

Tensor charbonnier_loss(const Tensor& pred, const Tensor& target, float eps) {
  require_same_shape(pred, target, "charbonnier_loss");
  if (eps <= 0.0f) throw ConfigError("charbonnier_loss: eps must be positive");
  Tape* tape = joint_tape({&pred, &target});
  Tensor out = make_out({1}, tape);
  const float* pp = pred.ptr();
  const float* tp = target.ptr();
  long n = pred.numel();
  float e2 = eps * eps;
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    float d = pp[i] - tp[i];
    acc += std::sqrt(static_cast<double>(d) * d + e2);
  }
  out.ptr()[0] = static_cast<float>(acc / static_cast<double>(n));
  if (tape) {
    int on = out.node;
    int pn = pred.tracked() ? pred.node : -1;
    int tn = target.tracked() ? target.node : -1;
    auto pd = pred.data;
    auto td = target.data;
    tape->set_backward(on, [tape, on, pn, tn, n, e2, pd, td] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      float g = (*go)[0] / static_cast<float>(n);
      const float* pp = pd->data();
      const float* tp = td->data();
      float* gp = pn >= 0 ? tape->grad(pn).data() : nullptr;
      float* gt = tn >= 0 ? tape->grad(tn).data() : nullptr;
      for (long i = 0; i < n; ++i) {
        float d = pp[i] - tp[i];
        float v = g * d / std::sqrt(d * d + e2);
        if (gp) gp[i] += v;
        if (gt) gt[i] -= v;
      }
    });
  }
  return out;
}

// ---- structural --------------------------------------------------------------

Tensor channel_concat(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ConfigError("channel_concat: empty input list");
  int B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int cs = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != 4) throw ConfigError("channel_concat: rank-4 tensors required");
    if (t.dim(0) != B || t.dim(2) != H || t.dim(3) != W)
      throw ConfigError("channel_concat: batch/spatial mismatch");
    cs += t.dim(1);
  }
  std::vector<const Tensor*> views;
  for (const Tensor& t : xs) views.push_back(&t);
  Tape* tape = nullptr;
  for (const Tensor* t : views)
    if (t->tracked()) {
      if (tape && tape != t->tape) throw ConfigError("channel_concat: mixed tapes");
      tape = t->tape;
    }
  Tensor out = make_out({B, cs, H, W}, tape);
  long plane = static_cast<long>(H) * W;
  float* yp = out.ptr();
  for (int b = 0; b < B; ++b) {
    long off = static_cast<long>(b) * cs * plane;
    for (const Tensor* t : views) {
      long cn = static_cast<long>(t->dim(1)) * plane;
      if (cn > 0)
        std::memcpy(yp + off, t->ptr() + static_cast<long>(b) * cn, static_cast<size_t>(cn) * sizeof(float));
      off += cn;
    }
  }
  if (tape) {
    struct Piece {
      int node;
      int ch;
    };
    std::vector<Piece> pieces;
    for (const Tensor* t : views) pieces.push_back({t->tracked() ? t->node : -1, t->dim(1)});
    int on = out.node;
    tape->set_backward(on, [tape, on, pieces, B, cs, plane] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      for (int b = 0; b < B; ++b) {
        long off = static_cast<long>(b) * cs * plane;
        for (const Piece& p : pieces) {
          long cn = static_cast<long>(p.ch) * plane;
          if (p.node >= 0 && cn > 0)
            axpy(1.0f, go->data() + off, tape->grad(p.node).data() + static_cast<long>(b) * cn, cn);
          off += cn;
        }
      }
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
  if (x.rank() != 4) throw ConfigError("slice_channels: rank-4 tensor required");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (c0 < 0 || c1 > C || c0 > c1) throw ConfigError("slice_channels: bad channel range");
  Tape* tape = joint_tape({&x});
  int oc = c1 - c0;
  Tensor out = make_out({B, oc, H, W}, tape);
  long plane = static_cast<long>(H) * W;
  for (int b = 0; b < B; ++b)
    if (oc > 0)
      std::memcpy(out.ptr() + static_cast<long>(b) * oc * plane,
                  x.ptr() + (static_cast<long>(b) * C + c0) * plane,
                  static_cast<size_t>(oc) * plane * sizeof(float));
  if (tape && x.tracked()) {
    int on = out.node, xn = x.node;
    tape->set_backward(on, [tape, on, xn, B, C, c0, oc, plane] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      float* gx = tape->grad(xn).data();
      for (int b = 0; b < B; ++b)
        axpy(1.0f, go->data() + static_cast<long>(b) * oc * plane,
             gx + (static_cast<long>(b) * C + c0) * plane, static_cast<long>(oc) * plane);
    });
  }
  return out;
}

Tensor crop_spatial(const Tensor& x, int y0, int x0, int h, int w) {
  if (x.rank() != 4) throw ConfigError("crop_spatial: rank-4 tensor required");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (y0 < 0 || x0 < 0 || y0 + h > H || x0 + w > W || h <= 0 || w <= 0)
    throw ConfigError("crop_spatial: window out of bounds");
  Tape* tape = joint_tape({&x});
  Tensor out = make_out({B, C, h, w}, tape);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const float* src = x.ptr() + ((static_cast<long>(b) * C + c) * H + y0) * W + x0;
      float* dst = out.ptr() + (static_cast<long>(b) * C + c) * h * w;
      for (int r = 0; r < h; ++r)
        std::memcpy(dst + static_cast<long>(r) * w, src + static_cast<long>(r) * W,
                    static_cast<size_t>(w) * sizeof(float));
    }
  if (tape && x.tracked()) {
    int on = out.node, xn = x.node;
    tape->set_backward(on, [tape, on, xn, B, C, H, W, y0, x0, h, w] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      float* gx = tape->grad(xn).data();
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const float* src = go->data() + (static_cast<long>(b) * C + c) * h * w;
          float* dst = gx + ((static_cast<long>(b) * C + c) * H + y0) * W + x0;
          for (int r = 0; r < h; ++r)
            axpy(1.0f, src + static_cast<long>(r) * w, dst + static_cast<long>(r) * W, w);
        }
    });
  }
  return out;
}

Tensor paste_spatial(const Tensor& base, const Tensor& patch, int y0, int x0) {
  if (base.rank() != 4 || patch.rank() != 4) throw ConfigError("paste_spatial: rank-4 tensors required");
  int B = base.dim(0), C = base.dim(1), H = base.dim(2), W = base.dim(3);
  int ph = patch.dim(2), pw = patch.dim(3);
  if (patch.dim(0) != B || patch.dim(1) != C) throw ConfigError("paste_spatial: batch/channel mismatch");
  if (y0 < 0 || x0 < 0 || y0 + ph > H || x0 + pw > W)
    throw ConfigError("paste_spatial: patch exceeds base bounds");
  Tape* tape = joint_tape({&base, &patch});
  Tensor out = make_out({B, C, H, W}, tape);
  std::memcpy(out.ptr(), base.ptr(), static_cast<size_t>(base.numel()) * sizeof(float));
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const float* src = patch.ptr() + (static_cast<long>(b) * C + c) * ph * pw;
      float* dst = out.ptr() + ((static_cast<long>(b) * C + c) * H + y0) * W + x0;
      for (int r = 0; r < ph; ++r)
        std::memcpy(dst + static_cast<long>(r) * W, src + static_cast<long>(r) * pw,
                    static_cast<size_t>(pw) * sizeof(float));
    }
  if (tape) {
    int on = out.node;
    int bn = base.tracked() ? base.node : -1;
    int pn = patch.tracked() ? patch.node : -1;
    tape->set_backward(on, [tape, on, bn, pn, B, C, H, W, ph, pw, y0, x0] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      if (bn >= 0) {
        float* gb = tape->grad(bn).data();
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            long off = (static_cast<long>(b) * C + c) * H * W;
            for (int y = 0; y < H; ++y) {
              bool in_rows = y >= y0 && y < y0 + ph;
              const float* src = go->data() + off + static_cast<long>(y) * W;
              float* dst = gb + off + static_cast<long>(y) * W;
              if (!in_rows) {
                axpy(1.0f, src, dst, W);
              } else {
                axpy(1.0f, src, dst, x0);
                axpy(1.0f, src + x0 + pw, dst + x0 + pw, W - x0 - pw);
              }
            }
          }
      }
      if (pn >= 0) {
        float* gp = tape->grad(pn).data();
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const float* src = go->data() + ((static_cast<long>(b) * C + c) * H + y0) * W + x0;
            float* dst = gp + (static_cast<long>(b) * C + c) * ph * pw;
            for (int r = 0; r < ph; ++r)
              axpy(1.0f, src + static_cast<long>(r) * W, dst + static_cast<long>(r) * pw, pw);
          }
      }
    });
  }
  return out;
}

namespace {
inline int mirror_index(int i, int n) {
  // reflect without edge repetition: -1 -> 1, n -> n-2
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}
}  // namespace

Tensor reflect_pad(const Tensor& x, int top, int bottom, int left, int right) {
  if (x.rank() != 4) throw ConfigError("reflect_pad: rank-4 tensor required");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw ConfigError("reflect_pad: negative pad");
  if (top >= H || bottom >= H || left >= W || right >= W)
    throw ConfigError("reflect_pad: pad must be smaller than the dim");
  Tape* tape = joint_tape({&x});
  int OH = H + top + bottom, OW = W + left + right;
  Tensor out = make_out({B, C, OH, OW}, tape);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const float* src = x.ptr() + (static_cast<long>(b) * C + c) * H * W;
      float* dst = out.ptr() + (static_cast<long>(b) * C + c) * OH * OW;
      for (int oy = 0; oy < OH; ++oy) {
        int iy = mirror_index(oy - top, H);
        for (int ox = 0; ox < OW; ++ox)
          dst[static_cast<long>(oy) * OW + ox] = src[static_cast<long>(iy) * W + mirror_index(ox - left, W)];
      }
    }
  if (tape && x.tracked()) {
    int on = out.node, xn = x.node;
    tape->set_backward(on, [tape, on, xn, B, C, H, W, OH, OW, top, left] {
      const std::vector<float>* go = tape->grad_if(on);
      if (!go) return;
      float* gx = tape->grad(xn).data();
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const float* src = go->data() + (static_cast<long>(b) * C + c) * OH * OW;
          float* dst = gx + (static_cast<long>(b) * C + c) * H * W;
          for (int oy = 0; oy < OH; ++oy) {
            int iy = mirror_index(oy - top, H);
            for (int ox = 0; ox < OW; ++ox)
              dst[static_cast<long>(iy) * W + mirror_index(ox - left, W)] +=
                  src[static_cast<long>(oy) * OW + ox];
          }
        }
    });
  }
  return out;
}

Tensor detach(const Tensor& x) {
  Tensor t;
  t.shape = x.shape;
  t.data = x.data;
  return t;
}

Tensor clamp01(const Tensor& x) {
  Tensor t;
  t.shape = x.shape;
  t.data = std::make_shared<std::vector<float>>(*x.data);
  for (float& v : *t.data) v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return t;
}

// ---- finite differences ------------------------------------------------------

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0,
                         float eps, int max_coords, uint64_t seed) {
  if (eps <= 0.0f) throw ConfigError("finite_diff_check: eps must be positive");
  Tape tape;
  Tensor x_leaf;
  x_leaf.shape = x0.shape;
  x_leaf.data = std::make_shared<std::vector<float>>(*x0.data);
  x_leaf = tape.leaf(x_leaf);
  Tensor y = f(x_leaf);

  float scale = 0.0f;
  for (long i = 0; i < y.numel(); ++i) scale = std::max(scale, std::abs(y.ptr()[i]));
  for (long i = 0; i < x0.numel(); ++i) scale = std::max(scale, std::abs(x0.ptr()[i]));

  std::vector<float> proj(static_cast<size_t>(y.numel()), 1.0f);
  if (y.numel() != 1) {
    Rng prng(mix_seed(seed, 0x70726f6aULL));
    for (float& p : proj) p = prng.uniform() * 2.0f - 1.0f;
    Tensor pt;
    pt.shape = y.shape;
    pt.data = std::make_shared<std::vector<float>>(proj);
    y = sum_all(mul(y, pt));
  }
  tape.backward(y);
  const std::vector<float>* analytic = grad_of(x_leaf);

  auto eval_at = [&f, &proj](const Tensor& base, long coord, float value) {
    Tensor probe;
    probe.shape = base.shape;
    probe.data = std::make_shared<std::vector<float>>(*base.data);
    (*probe.data)[static_cast<size_t>(coord)] = value;
    Tensor out = f(probe);
    if (out.numel() != static_cast<long>(proj.size()))
      throw UsageError("finite_diff_check: f changed output size under perturbation");
    const float* op = out.ptr();
    double acc = 0.0;
    for (size_t i = 0; i < proj.size(); ++i)
      acc += static_cast<double>(op[i]) * static_cast<double>(proj[i]);
    return acc;
  };

  long n = x0.numel();
  std::vector<long> coords;
  if (max_coords <= 0 || n <= max_coords) {
    coords.resize(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
  } else {
    Rng rng(seed);
    for (int i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_int(0, static_cast<int>(n) - 1));
  }

  // Below this, a discrepancy is explainable by float32 forward rounding of
  // the perturbed evaluations (a few tens of ulps at the data's magnitude,
  // amplified by 1/(2 eps)); the estimate has no resolving power there.
  const double resolution =
      32.0 * static_cast<double>(std::nextafterf(scale, std::numeric_limits<float>::infinity()) -
                                 scale) /
      (2.0 * static_cast<double>(eps));
  const double noise_floor = 1e-4;
  double max_rel = 0.0;
  for (long c : coords) {
    float xc = (*x0.data)[static_cast<size_t>(c)];
    float xp = xc + eps, xm = xc - eps;
    double denom = static_cast<double>(xp) - static_cast<double>(xm);  // exact step as stored
    if (denom == 0.0) continue;  // eps below the ulp of this coordinate
    double num = (eval_at(x0, c, xp) - eval_at(x0, c, xm)) / denom;
    double ana = analytic ? static_cast<double>((*analytic)[static_cast<size_t>(c)]) : 0.0;
    if (std::abs(num) < noise_floor && std::abs(ana) < noise_floor) continue;
    if (std::abs(ana - num) <= resolution) continue;
    double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

// ---- parameters --------------------------------------------------------------

Tensor& ParamStore::create_conv(const std::string& name_prefix, int out_ch, int in_ch, int kh,
                                int kw) {
  float bound = 1.0f / std::sqrt(static_cast<float>(in_ch) * kh * kw);
  std::string wname = name_prefix + ".w";
  if (map_.count(wname)) throw ConfigError("ParamStore: duplicate parameter " + wname);
  Tensor w = uniform_tensor({out_ch, in_ch, kh, kw}, -bound, bound, rng_);
  order_.push_back(wname);
  map_[wname] = std::move(w);
  create(name_prefix + ".b", {out_ch});
  return map_[wname];
}

Tensor& ParamStore::create(const std::string& name, std::vector<int> shape) {
  if (map_.count(name)) throw ConfigError("ParamStore: duplicate parameter " + name);
  order_.push_back(name);
  map_[name] = zeros(std::move(shape));
  return map_[name];
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw ConfigError("ParamStore: unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw ConfigError("ParamStore: unknown parameter " + name);
  return it->second;
}

bool ParamStore::has(const std::string& name) const { return map_.count(name) > 0; }

long ParamStore::total_params() const {
  long n = 0;
  for (const auto& name : order_) n += map_.at(name).numel();
  return n;
}

long ParamStore::group_params(const std::string& prefix) const {
  long n = 0;
  for (const auto& name : order_)
    if (name.rfind(prefix, 0) == 0) n += map_.at(name).numel();
  return n;
}

void ParamStore::attach_all(Tape& tape) {
  for (const auto& name : order_) {
    Tensor& t = map_[name];
    t.tape = &tape;
    t.node = tape.add_node(t.numel());
  }
}

void ParamStore::detach_all() {
  for (const auto& name : order_) {
    Tensor& t = map_[name];
    t.tape = nullptr;
    t.node = -1;
  }
}

}  // namespace crfp
